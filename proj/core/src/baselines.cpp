#include "volcast/baselines.hpp"

#include <cmath>
#include <limits>

#include "nlohmann/json.hpp"
#include "volcast/errors.hpp"
#include "volcast/rng.hpp"

namespace volcast {

std::vector<double> persistence_forecast(double last_value, int horizon) {
    if (horizon < 1) throw UsageError("persistence_forecast: horizon must be >= 1");
    return std::vector<double>(static_cast<std::size_t>(horizon), last_value);
}

namespace {

Eigen::MatrixXd glorot_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            w(i, j) = rng.uniform(-limit, limit);
    return w;
}

double half_mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
    return 0.5 * (pred - truth).squaredNorm() / static_cast<double>(truth.size());
}

} // namespace

Eigen::VectorXd MlpModel::predict(const Eigen::MatrixXd& X) const {
    if (X.cols() != dim()) throw UsageError("MlpModel::predict: dimension mismatch");
    const Eigen::MatrixXd Xs = standardizer_.apply(X);
    // hidden activations per row: tanh(W1·x + b1)
    Eigen::MatrixXd H = (Xs * w1_.transpose()).rowwise() + b1_.transpose();
    H = H.array().tanh().matrix();
    Eigen::VectorXd out = H * w2_;
    out.array() += b2_;
    return (out.array() * target_scale_ + target_center_).matrix();
}

MlpModel mlp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                 const MlpSpec& spec) {
    const Eigen::Index n = X.rows();
    if (n < 20) throw UsageError("mlp_fit: at least 20 training rows required");
    if (y.size() != n) throw UsageError("mlp_fit: X rows and target count differ");
    if (spec.hidden < 1) throw UsageError("mlp_fit: hidden size must be >= 1");
    if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0))
        throw UsageError("mlp_fit: validation_fraction must be in (0,1)");

    MlpModel m;
    m.spec_ = spec;
    m.standardizer_ = Standardizer::fit(X);
    m.target_center_ = y.mean();
    const double var_y =
        (y.array() - m.target_center_).square().sum() / static_cast<double>(n);
    m.target_scale_ = var_y > 0.0 ? std::sqrt(var_y) : 1.0;

    const Eigen::MatrixXd Xs = m.standardizer_.apply(X);
    const Eigen::VectorXd ys =
        ((y.array() - m.target_center_) / m.target_scale_).matrix();

    // Chronological tail of the training window serves as validation.
    const Eigen::Index n_val = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(
               std::floor(spec.validation_fraction * static_cast<double>(n))));
    const Eigen::Index n_tr = n - n_val;
    const Eigen::MatrixXd Xtr = Xs.topRows(n_tr);
    const Eigen::VectorXd ytr = ys.head(n_tr);
    const Eigen::MatrixXd Xval = Xs.bottomRows(n_val);
    const Eigen::VectorXd yval = ys.tail(n_val);

    Rng rng(spec.seed);
    const Eigen::Index h = spec.hidden;
    const Eigen::Index d = X.cols();
    Eigen::MatrixXd w1 = glorot_init(h, d, rng);
    Eigen::VectorXd b1 = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd w2 = glorot_init(h, 1, rng).col(0);
    double b2 = 0.0;

    Eigen::MatrixXd v_w1 = Eigen::MatrixXd::Zero(h, d);
    Eigen::VectorXd v_b1 = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd v_w2 = Eigen::VectorXd::Zero(h);
    double v_b2 = 0.0;

    Eigen::MatrixXd best_w1 = w1;
    Eigen::VectorXd best_b1 = b1, best_w2 = w2;
    double best_b2 = b2;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    const double inv_ntr = 1.0 / static_cast<double>(n_tr);
    for (int epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        // Forward.
        Eigen::MatrixXd A = (Xtr * w1.transpose()).rowwise() + b1.transpose();
        const Eigen::MatrixXd H = A.array().tanh().matrix();
        Eigen::VectorXd pred = H * w2;
        pred.array() += b2;

        const Eigen::VectorXd err = pred - ytr; // d(loss)/d(pred) · n_tr
        const double loss = 0.5 * err.squaredNorm() * inv_ntr;
        if (!std::isfinite(loss))
            throw ModelError("MLP: non-finite loss at epoch " +
                             std::to_string(epoch));

        // Backward.
        const Eigen::VectorXd g_w2 = H.transpose() * err * inv_ntr;
        const double g_b2 = err.sum() * inv_ntr;
        const Eigen::MatrixXd delta =
            ((err * w2.transpose()).array() * (1.0 - H.array().square()))
                .matrix();
        const Eigen::MatrixXd g_w1 = delta.transpose() * Xtr * inv_ntr;
        const Eigen::VectorXd g_b1 = delta.colwise().sum().transpose() * inv_ntr;

        v_w1 = spec.momentum * v_w1 - spec.learning_rate * g_w1;
        v_b1 = spec.momentum * v_b1 - spec.learning_rate * g_b1;
        v_w2 = spec.momentum * v_w2 - spec.learning_rate * g_w2;
        v_b2 = spec.momentum * v_b2 - spec.learning_rate * g_b2;
        w1 += v_w1;
        b1 += v_b1;
        w2 += v_w2;
        b2 += v_b2;

        // Validation checkpoint.
        const Eigen::MatrixXd Hv =
            ((Xval * w1.transpose()).rowwise() + b1.transpose())
                .array()
                .tanh()
                .matrix();
        Eigen::VectorXd pv = Hv * w2;
        pv.array() += b2;
        const double val_loss = half_mse(pv, yval);
        if (!std::isfinite(val_loss))
            throw ModelError("MLP: non-finite loss at epoch " +
                             std::to_string(epoch));
        if (val_loss < best_val) {
            best_val = val_loss;
            best_w1 = w1;
            best_b1 = b1;
            best_w2 = w2;
            best_b2 = b2;
            since_best = 0;
            m.checkpoint_losses_.push_back(val_loss);
        } else if (++since_best >= spec.patience) {
            break;
        }
    }

    m.w1_ = std::move(best_w1);
    m.b1_ = std::move(best_b1);
    m.w2_ = std::move(best_w2);
    m.b2_ = best_b2;
    return m;
}

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(
        values.data(), static_cast<Eigen::Index>(values.size()));
}

} // namespace

std::string mlp_to_text(const MlpModel& model) {
    nlohmann::json j;
    j["format"] = "volcast-mlp";
    j["version"] = 1;
    j["spec"] = {{"hidden", model.spec().hidden},
                 {"seed", model.spec().seed},
                 {"max_epochs", model.spec().max_epochs},
                 {"learning_rate", model.spec().learning_rate},
                 {"momentum", model.spec().momentum},
                 {"patience", model.spec().patience},
                 {"validation_fraction", model.spec().validation_fraction}};
    j["standardizer"] = {{"mean", vec_to_json(model.standardizer().mean)},
                         {"scale", vec_to_json(model.standardizer().scale)}};
    j["target_center"] = model.target_center();
    j["target_scale"] = model.target_scale();
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < model.w1().rows(); ++i) {
        const Eigen::RowVectorXd row = model.w1().row(i);
        rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    }
    j["w1"] = rows;
    j["b1"] = vec_to_json(model.b1());
    j["w2"] = vec_to_json(model.w2());
    j["b2"] = model.b2();
    j["checkpoint_losses"] = model.checkpoint_losses();
    return j.dump(2) + "\n";
}

MlpModel mlp_from_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model file: not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format") != "volcast-mlp")
            throw DataError("model file: unexpected format tag");
        if (j.at("version") != 1)
            throw DataError("model file: unsupported version");
        MlpModel m;
        m.spec_.hidden = j.at("spec").at("hidden");
        m.spec_.seed = j.at("spec").at("seed");
        m.spec_.max_epochs = j.at("spec").at("max_epochs");
        m.spec_.learning_rate = j.at("spec").at("learning_rate");
        m.spec_.momentum = j.at("spec").at("momentum");
        m.spec_.patience = j.at("spec").at("patience");
        m.spec_.validation_fraction = j.at("spec").at("validation_fraction");
        m.standardizer_.mean = vec_from_json(j.at("standardizer").at("mean"));
        m.standardizer_.scale = vec_from_json(j.at("standardizer").at("scale"));
        m.target_center_ = j.at("target_center");
        m.target_scale_ = j.at("target_scale");
        const auto& jw1 = j.at("w1");
        const Eigen::Index h = static_cast<Eigen::Index>(jw1.size());
        if (h < 1) throw DataError("model file: empty weight matrix");
        const Eigen::Index d = static_cast<Eigen::Index>(jw1[0].size());
        m.w1_.resize(h, d);
        for (Eigen::Index i = 0; i < h; ++i) {
            const auto row = jw1[i].get<std::vector<double>>();
            if (static_cast<Eigen::Index>(row.size()) != d)
                throw DataError("model file: ragged matrix");
            m.w1_.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), d);
        }
        m.b1_ = vec_from_json(j.at("b1"));
        m.w2_ = vec_from_json(j.at("w2"));
        m.b2_ = j.at("b2");
        m.checkpoint_losses_ = j.at("checkpoint_losses").get<std::vector<double>>();
        if (m.b1_.size() != h || m.w2_.size() != h ||
            m.standardizer_.mean.size() != d)
            throw DataError("model file: inconsistent shapes");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model file: missing or mistyped field: ") +
                        e.what());
    }
}

} // namespace volcast
