#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "volcast/gp.hpp"

namespace volcast {

enum class CensorStatus { exact, censored_above, censored_below };

/// One observation under the Tobit likelihood. For exact observations the
/// bound is unused; for censored ones the latent value is only known to lie
/// beyond `bound` (above or below), and `value` equals the bound.
struct CensoredTarget {
    double value = 0.0;
    CensorStatus status = CensorStatus::exact;
    double bound = 0.0;

    static CensoredTarget exact(double v) { return {v, CensorStatus::exact, 0.0}; }
    static CensoredTarget above(double b) {
        return {b, CensorStatus::censored_above, b};
    }
    static CensoredTarget below(double b) {
        return {b, CensorStatus::censored_below, b};
    }
};

/// Site parameters of the expectation-propagation approximation in natural
/// form: site i contributes exp(ν̃_i·f_i − ½τ̃_i·f_i²). site_means holds
/// ν̃/τ̃ (0 where τ̃ = 0) for reporting.
struct EpState {
    Eigen::VectorXd site_means;
    Eigen::VectorXd site_precisions; // τ̃ ≥ 0 (negative updates clipped)
    Eigen::VectorXd site_nu;         // ν̃ (natural linear parameter)
    bool converged = false;
    int sweeps = 0;
    double damping = 0.5;
};

struct EpOptions {
    int max_sweeps = 100;
    double tol = 1e-6;      // max |site-parameter change| per sweep
    double damping = 0.5;
    bool standardize_inputs = true; // disable for fixed-prior toy problems
    bool center_targets = true;     // centered by the mean of exact values
};

/// Moments of N(mu, sigma²) truncated to [lower, ∞). Stable for z-scores far
/// beyond ±38 via an asymptotic expansion of the scaled complementary error
/// function; never 0/0.
struct TruncatedMoments {
    double mass = 1.0;      // in (0, 1]
    double mean = 0.0;      // ≥ lower
    double variance = 0.0;  // in [0, sigma²]
};
TruncatedMoments truncated_gaussian_moments(double mu, double sigma, double lower);

double normal_pdf(double z);
double normal_cdf(double z);

/// GP posterior under the Tobit likelihood, approximated with EP. Immutable
/// once fitted; all derived factors are recomputed deterministically from the
/// stored site parameters.
class CensoredGp {
public:
    CensoredGp() = default;

    /// Assemble the posterior from stored parts (used by ep_fit and by
    /// deserialization): recomputes the kernel, the stable B-factor and the
    /// training-input posterior from the site parameters.
    static CensoredGp from_parts(Eigen::MatrixXd inputs_std,
                                 std::vector<CensoredTarget> targets_centered,
                                 GpHyperparams hyper_std,
                                 Standardizer standardizer, double center,
                                 EpState state);

    const Eigen::MatrixXd& inputs() const { return inputs_; }
    const std::vector<CensoredTarget>& targets() const { return targets_; }
    const GpHyperparams& hyper() const { return hyper_; }
    GpHyperparams raw_hyper() const;
    const Standardizer& standardizer() const { return standardizer_; }
    double center() const { return center_; }
    const EpState& state() const { return state_; }
    Eigen::Index dim() const { return inputs_.cols(); }
    Eigen::Index train_size() const { return inputs_.rows(); }

    /// Latent posterior at the training inputs, in original target units.
    Eigen::VectorXd post_mean() const;
    const Eigen::VectorXd& post_var() const { return post_var_; }

    // Internals needed by prediction.
    const Eigen::MatrixXd& kernel() const { return kernel_; }
    const Eigen::MatrixXd& chol_b() const { return chol_b_; }
    const Eigen::VectorXd& sqrt_tau() const { return sqrt_tau_; }
    const Eigen::VectorXd& predict_weights() const { return predict_weights_; }

private:
    Eigen::MatrixXd inputs_;
    std::vector<CensoredTarget> targets_;
    GpHyperparams hyper_;
    Standardizer standardizer_;
    double center_ = 0.0;
    EpState state_;

    Eigen::MatrixXd kernel_;          // K over standardized inputs
    Eigen::MatrixXd chol_b_;          // chol(I + S̃^½ K S̃^½)
    Eigen::VectorXd sqrt_tau_;        // S̃^½ diagonal
    Eigen::VectorXd predict_weights_; // ν̃ − S̃^½ B⁻¹ S̃^½ K ν̃
    Eigen::VectorXd post_mean_;       // centered latent mean at training inputs
    Eigen::VectorXd post_var_;        // latent variance at training inputs
};

/// Fit the Tobit GP by expectation propagation with fixed hyperparameters
/// (raw input space; typically inherited from an exact-data fit). Exact
/// targets become analytic Gaussian sites; censored targets are refined by
/// sequential damped moment-matching sweeps in input order. Deterministic.
/// Throws ModelError with sweep/site diagnostics if a site parameter leaves
/// the finite range.
CensoredGp ep_fit(const Eigen::MatrixXd& X,
                  const std::vector<CensoredTarget>& y,
                  const GpHyperparams& raw_hyper, const EpOptions& opts = {});

/// Latent predictive posterior at new inputs plus the probability that the
/// latent value exceeds `bound`. Means are in original target units;
/// variances are latent (no observation noise).
struct CensoredPrediction {
    Eigen::VectorXd latent_mean;
    Eigen::VectorXd latent_variance;
    Eigen::VectorXd prob_exceeds_bound; // each in [0, 1]
};
CensoredPrediction predict_censored(const CensoredGp& model,
                                    const Eigen::MatrixXd& Xstar, double bound);

/// Versioned text serialization mirroring the exact-GP one.
std::string censored_to_text(const CensoredGp& model);
CensoredGp censored_from_text(const std::string& text);

} // namespace volcast
