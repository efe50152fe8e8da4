#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "renewal/distributions.hpp"
#include "renewal/epidemic_model.hpp"
#include "renewal/offset_vector.hpp"
#include "renewal/rng.hpp"

namespace renewal {

struct Hyperparams {
    double sigma = 1.5; // sd of L_{1-K_m}
    double tau = 0.025; // sd of daily increments of L
    OffsetVector<double> lambda0; // prior means of I_init over (1-K_m-K_w)..(-K_m)

    void validate(int max_lag, int horizon) const;
};

// Link between L and the rate multiplier in the -f(L)·kappa term of the L target.
// The sampler uses exp; tests swap in a quadratic to get an exactly Gaussian target.
struct RateLink {
    std::function<double(double)> f, df, d2f;

    static RateLink exponential();
    // e^c (1 + (x-c) + (x-c)^2/2)
    static RateLink quadratic_about(double c);
};

// Fixed inputs of one fit: integerized detections, distributions, hyperparameters,
// and the observed delay mass b_s.
class Model {
public:
    // `smoothed` holds D_1..D_T; values are rounded half-to-even once here.
    Model(std::span<const double> smoothed, InfectivityProfile profile, TimeVaryingDelay delay, Hyperparams hyper);

    int T() const noexcept { return static_cast<int>(detections_.size()); }
    int K_m() const noexcept { return delay_.max_lag(); }
    int K_w() const noexcept { return profile_.horizon(); }
    Day first_init() const noexcept { return 1 - K_m() - K_w(); }
    Day first() const noexcept { return 1 - K_m(); }
    Day last() const noexcept { return T() - 1; }
    std::size_t latent_size() const noexcept { return static_cast<std::size_t>(T() + K_m() - 1); }

    const std::vector<long long>& detections() const noexcept { return detections_; }
    long long detection(Day t) const { return detections_[static_cast<std::size_t>(t - 1)]; }
    const OffsetVector<double>& observed_mass() const noexcept { return b_; }
    const InfectivityProfile& profile() const noexcept { return profile_; }
    const TimeVaryingDelay& delay() const noexcept { return delay_; }
    const Hyperparams& hyper() const noexcept { return hyper_; }

    // kappa_s = sum_k w_k I_{s-k} over first()..last(); I must start at first_init().
    OffsetVector<double> kappa(const OffsetVector<long long>& infections) const;

private:
    std::vector<long long> detections_;
    InfectivityProfile profile_;
    TimeVaryingDelay delay_;
    Hyperparams hyper_;
    OffsetVector<double> b_;
};

struct LatentState {
    OffsetVector<double> L;       // (1-K_m)..(T-1)
    OffsetVector<long long> I;    // (1-K_m-K_w)..(T-1)
    OffsetVector<long long> B;    // (1-K_m)..(T-1)
    // Allocation columns for the last K_m observation days; A_tail[t][k-1] = A_{t-k,t}.
    OffsetVector<std::vector<long long>> A_tail;
    OffsetVector<double> kappa;
    OffsetVector<double> lambda;
};

// Recomputes kappa and lambda from I and L.
void refresh_caches(const Model& model, LatentState& state);

struct ProposalScaffold {
    OffsetVector<double> psi; // (1-K_m-K_w)..(T-1)
    std::vector<double> pi;   // pi_1..pi_T
    int floored = 0;          // entries of psi raised to the 1e-12 floor

    double nu(const TimeVaryingDelay& delay, Day s, Day t) const {
        return psi[s] * delay.at(s, t) / pi[static_cast<std::size_t>(t - 1)];
    }
};

struct Lambda0 {
    OffsetVector<double> values;
    bool floored = false;
    std::string source; // "pre-window" or "em-start"
};

// Incidence after 10 EM steps from the back-shifted constant start; over (1-K_m)..(T-1).
OffsetVector<double> em_starting_incidence(std::span<const double> detections, const TimeVaryingDelay& delay);

Lambda0 make_lambda0(const std::optional<std::vector<double>>& pre_window, std::span<const double> fallback,
                     const TimeVaryingDelay& delay, int horizon);

LatentState init_chain(const Model& model, Rng& rng);

// pi and the floor count from an explicit psi; shared by the scaffold builder and tests.
ProposalScaffold scaffold_from_psi(const Model& model, OffsetVector<double> psi);

ProposalScaffold build_proposal_scaffold(const Model& model, const OffsetVector<double>& L);

struct IACandidate {
    OffsetVector<long long> I;
    OffsetVector<long long> B;
    OffsetVector<double> kappa;
    OffsetVector<double> lambda;
    OffsetVector<std::vector<long long>> columns; // t = 1..T, columns[t][k-1] = A_{t-k,t}
};

IACandidate propose_IA(const Model& model, const ProposalScaffold& scaffold, const OffsetVector<double>& L, Rng& rng);

// What the IA acceptance ratio needs from either side.
struct IAView {
    const OffsetVector<long long>& B;
    const OffsetVector<double>& lambda;
    const ProposalScaffold& scaffold;
};

double log_accept_IA(const Model& model, const IAView& current, const IAView& candidate);
// Same ratio written with Poisson log-likelihood ratios.
double log_accept_IA_alternative(const Model& model, const IAView& current, const IAView& candidate);

// Tridiagonal precision Q and linear term b of the L proposal centred at L.
struct TridiagonalSystem {
    std::vector<double> diag;
    double off = 0.0; // every off-diagonal entry
    std::vector<double> rhs;
};

TridiagonalSystem l_proposal_system(const OffsetVector<double>& L, const OffsetVector<double>& kappa,
                                    const OffsetVector<long long>& I, const Hyperparams& hyper,
                                    const RateLink& link);

// N(Q^{-1} b, Q^{-1}) with Q = U^T U, U upper bidiagonal.
class GaussianProposal {
public:
    explicit GaussianProposal(const TridiagonalSystem& system);

    std::size_t size() const noexcept { return u_diag_.size(); }
    std::vector<double> mean() const;
    double log_density(std::span<const double> x) const;
    // Returns the draw; `log_q` receives its log-density.
    std::vector<double> sample(Rng& rng, double& log_q) const;

private:
    std::vector<double> back_solve(std::vector<double> v) const;

    std::vector<double> u_diag_;
    std::vector<double> u_super_;
    std::vector<double> y_; // U^{-T} b
    double log_det_half_ = 0.0;
};

struct LProposal {
    OffsetVector<double> L_star;
    double log_q_forward = 0.0; // log q(L* | L)
    double log_q_reverse = 0.0; // log q(L | L*)
};

LProposal propose_L(const OffsetVector<double>& L, const OffsetVector<double>& kappa, const OffsetVector<long long>& I,
                    const Hyperparams& hyper, Rng& rng, const RateLink& link = RateLink::exponential());

// Unnormalized log p(L) + sum_s (I_s L_s - f(L_s) kappa_s).
double log_target_L(const OffsetVector<double>& L, const OffsetVector<double>& kappa,
                    const OffsetVector<long long>& I, const Hyperparams& hyper,
                    const RateLink& link = RateLink::exponential());

// Maximizer of log_target_L over L for fixed (I, kappa), by damped Newton steps from `start`
// using the proposal system as the local quadratic model.
OffsetVector<double> conditional_mode_L(const OffsetVector<double>& start, const OffsetVector<double>& kappa,
                                        const OffsetVector<long long>& I, const Hyperparams& hyper,
                                        const RateLink& link = RateLink::exponential());

double log_accept_L(const OffsetVector<double>& L, const LProposal& proposal, const OffsetVector<double>& kappa,
                    const OffsetVector<long long>& I, const Hyperparams& hyper,
                    const RateLink& link = RateLink::exponential());

// x_T assembled from a state; requires T >= K_m.
EpidemicState final_state(const Model& model, const LatentState& state);

struct McmcConfig {
    int iters = 20000;
    int burn_in = 5000;
    int thin = 10;
    int n_chains = 2;
    std::uint64_t seed = 1;
    int threads = 0; // 0 = one per chain
};

struct ChainTelemetry {
    std::uint64_t stream = 0;
    double ia_acceptance = 0.0;
    double ia_acceptance_burn_in = 0.0;
    double l_acceptance = 0.0;
    long long psi_floor_events = 0;
};

struct PosteriorSamples {
    int T = 0, K_m = 0, K_w = 0;
    std::uint64_t seed = 0;
    int iters = 0, burn_in = 0, thin = 0;
    std::vector<OffsetVector<double>> L;    // each over (1-K_m)..(T-1)
    std::vector<OffsetVector<long long>> I; // each over (1-K_m-K_w)..(T-1)
    std::vector<int> chain;
    std::vector<EpidemicState> final_states; // empty when T < K_m
    std::vector<ChainTelemetry> telemetry;
    std::vector<std::string> warnings;

    std::size_t size() const noexcept { return L.size(); }
};

PosteriorSamples run_mcmc(const Model& model, const McmcConfig& config);

// Gelman-Rubin potential scale reduction of L per day; a single chain is split in halves.
OffsetVector<double> gelman_rubin(const PosteriorSamples& samples);

// Type-7 sample quantile (linear interpolation between order statistics).
double sample_quantile(std::vector<double> values, double p);

struct QuantileTable {
    std::vector<double> probs;
    OffsetVector<std::vector<double>> R; // (1-K_m)..(T-1)
    OffsetVector<std::vector<double>> I; // (1-K_m)..(T-1)
};

QuantileTable posterior_quantiles(const PosteriorSamples& samples, std::span<const double> probs);

struct PredictiveDraws {
    Day first_latent = 0;                  // T: first day of predicted R and I
    std::vector<std::vector<double>> R;    // [draw][h], days T..T+h-1
    std::vector<std::vector<long long>> I; // [draw][h]
    std::vector<std::vector<long long>> D; // [draw][h], days T+1..T+h
};

PredictiveDraws predictive_draws(std::span<const EpidemicState> states, int horizon, double tau,
                                 const InfectivityProfile& profile, const TimeVaryingDelay& delay, Rng& rng);

struct PredictiveTable {
    std::vector<double> probs;
    OffsetVector<std::vector<double>> R; // days T..T+h-1
    OffsetVector<std::vector<double>> I; // days T..T+h-1
    OffsetVector<std::vector<double>> D; // days T+1..T+h
};

PredictiveTable posterior_predict(std::span<const EpidemicState> states, int horizon, double tau,
                                  const InfectivityProfile& profile, const TimeVaryingDelay& delay, Rng& rng,
                                  std::span<const double> probs);

} // namespace renewal
