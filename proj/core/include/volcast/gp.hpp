#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>

namespace volcast {

/// Squared-exponential ARD hyperparameters, stored in log space so the
/// exponentiated values are strictly positive by construction.
struct GpHyperparams {
    double log_signal_var = 0.0;              // ln σ_f²
    double log_noise_var = 0.0;               // ln σ_n²
    Eigen::VectorXd log_lengthscales;         // ln ℓ_d, one per input dimension

    double signal_var() const { return std::exp(log_signal_var); }
    double noise_var() const { return std::exp(log_noise_var); }
    Eigen::VectorXd lengthscales() const {
        return log_lengthscales.array().exp().matrix();
    }
    Eigen::Index dim() const { return log_lengthscales.size(); }
};

/// Per-column z-score transform fitted on training inputs. Columns with zero
/// spread keep scale 1 so the transform stays invertible.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& X);
    static Standardizer identity(Eigen::Index dim);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

/// k(x1, x2) = σ_f² · exp(−½ Σ_d ((x1_d − x2_d)/ℓ_d)²). Symmetric; throws
/// UsageError on dimension mismatch.
double kernel_ard(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                  const GpHyperparams& hyper);

/// Noise-free cross-kernel matrix, K[i][j] = k(X1.row(i), X2.row(j)).
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X1,
                              const Eigen::MatrixXd& X2,
                              const GpHyperparams& hyper);

/// Log marginal likelihood and its exact analytic gradient. Gradient layout:
/// [d/d log_signal_var, d/d log_noise_var, d/d log_lengthscale_0 ...].
struct LmlResult {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

/// value = −½ yᵀα − Σ ln(diag chol) − (n/2)·ln 2π for K + σ_n²·I.
/// Operates on X and y exactly as given (no standardization or centering).
LmlResult log_marginal_likelihood(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& y,
                                  const GpHyperparams& hyper);

struct GpFitOptions {
    int max_iter = 200;
    double tol = 1e-6;        // gradient infinity-norm target
    int restarts = 5;         // restart 0 = supplied init, rest perturbed
    std::uint64_t seed = 0;   // drives the restart perturbations
};

/// Immutable fitted GP. Inputs are stored standardized and targets centered;
/// hyper() is expressed in the standardized input space (raw_hyper() maps the
/// lengthscales back through the stored column scales).
class TrainedGp {
public:
    TrainedGp() = default;

    /// Factorize with fixed hyperparameters (given in raw input space).
    static TrainedGp train(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const GpHyperparams& raw_hyper);

    const Eigen::MatrixXd& inputs() const { return inputs_; }
    const Eigen::VectorXd& targets() const { return targets_; }
    const GpHyperparams& hyper() const { return hyper_; }
    GpHyperparams raw_hyper() const;
    const Standardizer& standardizer() const { return standardizer_; }
    double center() const { return center_; }
    const Eigen::MatrixXd& chol() const { return chol_; }
    const Eigen::VectorXd& alpha() const { return alpha_; }
    double jitter_used() const { return jitter_used_; }
    double final_lml() const { return final_lml_; }
    Eigen::Index dim() const { return inputs_.cols(); }
    Eigen::Index train_size() const { return inputs_.rows(); }

    /// Build from already-standardized inputs and centered targets; the
    /// hyperparameters are taken to be in the standardized space. Used by
    /// fit() and deserialization.
    static TrainedGp from_standardized(Eigen::MatrixXd inputs,
                                       Eigen::VectorXd targets,
                                       GpHyperparams hyper,
                                       Standardizer standardizer,
                                       double center);

private:
    friend TrainedGp gp_from_text(const std::string&);

    Eigen::MatrixXd inputs_;      // standardized, n×d
    Eigen::VectorXd targets_;     // centered, n
    GpHyperparams hyper_;         // standardized-space lengthscales
    Standardizer standardizer_;
    double center_ = 0.0;
    Eigen::MatrixXd chol_;        // lower-triangular L, L·Lᵀ = K + σ_n²I + jI
    Eigen::VectorXd alpha_;       // (K + σ_n²I + jI)⁻¹·targets
    double jitter_used_ = 0.0;
    double final_lml_ = 0.0;
};

/// Maximize the log marginal likelihood from `init` (raw input space) with a
/// quasi-Newton ascent and `opts.restarts` seeded restarts; the restart with
/// the highest final value wins, ties broken by lowest restart index. The
/// objective carries a weak log-normal hyperprior (sd 2 in log space)
/// centered on `init`, which stabilizes the ascent against lengthscale
/// collapse without materially moving well-identified optima.
/// Deterministic given opts.seed. Throws ModelError when every restart fails
/// to produce a finite marginal likelihood.
TrainedGp fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const GpHyperparams& init, const GpFitOptions& opts);

/// Same, with scale-aware default init: lengthscales = per-dimension input
/// standard deviation × sqrt(input count), σ_f² = var(y), σ_n² = 0.1·var(y).
TrainedGp fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const GpFitOptions& opts = {});

/// Posterior predictive at new inputs (raw space). `variance` includes the
/// noise term σ_n²; `latent_variance` does not.
struct GpPrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
    Eigen::VectorXd latent_variance;
};

GpPrediction predict(const TrainedGp& model, const Eigen::MatrixXd& Xstar);

/// Relevance share per input: (1/ℓ_d) / Σ_e (1/ℓ_e) over standardized-space
/// lengthscales. Non-negative, sums to 1; ordering equals ordering by 1/ℓ.
Eigen::VectorXd ard_relevance(const TrainedGp& model);

/// Versioned self-describing text serialization; load reproduces the model
/// bit-identically (the Cholesky factor is recomputed from stored state).
void save_gp(const TrainedGp& model, const std::string& path);
TrainedGp load_gp(const std::string& path);
std::string gp_to_text(const TrainedGp& model);
TrainedGp gp_from_text(const std::string& text);

} // namespace volcast
