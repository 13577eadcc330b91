#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "volcast/gp.hpp"

namespace volcast {

/// Every element of the result equals last_value (the persistence model
/// consumes only the latest observation, no history).
std::vector<double> persistence_forecast(double last_value, int horizon);

/// One hidden layer of tanh units, identity output, trained by full-batch
/// gradient descent with momentum on halved mean squared error.
/// Early stopping watches the chronological tail of the training window.
struct MlpSpec {
    int hidden = 11;
    std::uint64_t seed = 0;
    int max_epochs = 2000;
    double learning_rate = 0.05;
    double momentum = 0.9;
    int patience = 50;
    double validation_fraction = 0.2;
};

class MlpModel {
public:
    MlpModel() = default;

    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
    Eigen::Index dim() const { return w1_.cols(); }
    const MlpSpec& spec() const { return spec_; }

    /// Validation loss recorded each time early stopping accepted a new best
    /// set of weights; non-increasing by construction.
    const std::vector<double>& checkpoint_losses() const {
        return checkpoint_losses_;
    }

    // Exposed for serialization round-trips.
    const Standardizer& standardizer() const { return standardizer_; }
    double target_center() const { return target_center_; }
    double target_scale() const { return target_scale_; }
    const Eigen::MatrixXd& w1() const { return w1_; }
    const Eigen::VectorXd& b1() const { return b1_; }
    const Eigen::VectorXd& w2() const { return w2_; }
    double b2() const { return b2_; }

private:
    friend MlpModel mlp_fit(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                            const MlpSpec&);
    friend MlpModel mlp_from_text(const std::string&);

    MlpSpec spec_;
    Standardizer standardizer_;
    double target_center_ = 0.0;
    double target_scale_ = 1.0;
    Eigen::MatrixXd w1_; // hidden × d
    Eigen::VectorXd b1_; // hidden
    Eigen::VectorXd w2_; // hidden
    double b2_ = 0.0;
    std::vector<double> checkpoint_losses_;
};

/// Deterministic given spec.seed; throws ModelError with the epoch index if
/// the loss leaves the finite range, UsageError on fewer than 20 rows.
MlpModel mlp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                 const MlpSpec& spec);

std::string mlp_to_text(const MlpModel& model);
MlpModel mlp_from_text(const std::string& text);

} // namespace volcast
