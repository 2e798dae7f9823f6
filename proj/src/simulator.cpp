#include "pcis/simulator.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <vector>

#include "pcis/ellipsoid.hpp"
#include "pcis/rng.hpp"

namespace pcis {

void RolloutConfig::validate() const {
    if (horizon < 1) throw std::invalid_argument("RolloutConfig: horizon must be >= 1");
    if (n_rollouts < 1) throw std::invalid_argument("RolloutConfig: n_rollouts must be >= 1");
    if (jobs < 1) throw std::invalid_argument("RolloutConfig: jobs must be >= 1");
    if (initial_state_mode == InitialStateMode::Fixed && x0.size() == 0)
        throw std::invalid_argument("RolloutConfig: fixed mode requires x0");
}

Rollout rollout(const StepFn& step, const Eigen::MatrixXd& L, const Eigen::VectorXd& x0, int T,
                std::mt19937_64& rng) {
    if (L.cols() != x0.size()) throw std::invalid_argument("rollout: gain/state dimension");
    Rollout r;
    r.states.resize(T + 1, x0.size());
    r.states.row(0) = x0;
    r.valid_steps = T;
    Eigen::VectorXd x = x0;
    for (int k = 0; k < T; ++k) {
        const Eigen::VectorXd u = L * x;
        Eigen::VectorXd next = step(x, u, rng);
        if (!next.allFinite() || next.norm() > 1e9) {
            // Divergence: unsafe from this step onward.
            r.diverged = true;
            r.valid_steps = k;
            for (int j = k + 1; j <= T; ++j) r.states.row(j) = x;
            return r;
        }
        x = next;
        r.states.row(k + 1) = x;
    }
    return r;
}

WilsonInterval wilson_interval(std::int64_t successes, std::int64_t trials, double z) {
    WilsonInterval ci;
    if (trials <= 0) return ci;
    const double n = static_cast<double>(trials);
    const double phat = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (phat + z2 / (2.0 * n)) / denom;
    const double half =
        z * std::sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / denom;
    ci.lower = std::max(0.0, center - half);
    ci.upper = std::min(1.0, center + half);
    return ci;
}

namespace {

constexpr double kMembershipTol = 1e-9;

struct Counts {
    std::vector<std::int64_t> in_set;        // per step k = 0..T
    std::vector<std::int64_t> input_ok;      // per step k = 0..T-1, joint with in_set
    std::vector<std::int64_t> input_denom;   // per step k = 0..T-1, x_k in set
    std::int64_t all_time_safe = 0;
    std::int64_t all_time_contained = 0;

    explicit Counts(int T) : in_set(T + 1, 0), input_ok(T, 0), input_denom(T, 0) {}

    void add(const Counts& o) {
        for (size_t i = 0; i < in_set.size(); ++i) in_set[i] += o.in_set[i];
        for (size_t i = 0; i < input_ok.size(); ++i) {
            input_ok[i] += o.input_ok[i];
            input_denom[i] += o.input_denom[i];
        }
        all_time_safe += o.all_time_safe;
        all_time_contained += o.all_time_contained;
    }
};

bool in_halfspaces(const std::vector<Eigen::VectorXd>& rows, const Eigen::VectorXd& v) {
    for (const auto& row : rows)
        if (row.dot(v) > 1.0 + kMembershipTol) return false;
    return true;
}

}  // namespace

McReport monte_carlo(const StepFn& step, const PciResult& pci,
                     const PolytopeConstraints& constraints, const RolloutConfig& config) {
    config.validate();
    const int T = config.horizon;
    const Eigen::Index n = pci.P.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pci.P);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw std::invalid_argument("monte_carlo: P must be positive definite");
    const Eigen::MatrixXd W = congruence(
        es.eigenvectors(), Eigen::MatrixXd(es.eigenvalues().cwiseInverse().asDiagonal()));
    const Ellipsoidd pci_set(Eigen::VectorXd::Zero(n), W);

    auto run_range = [&](std::int64_t lo, std::int64_t hi, Counts& counts) {
        for (std::int64_t idx = lo; idx < hi; ++idx) {
            std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(idx)));
            Eigen::VectorXd x0;
            if (config.initial_state_mode == InitialStateMode::Fixed)
                x0 = config.x0;
            else
                x0 = sample_uniform(pci_set, rng);
            const Rollout r = rollout(step, pci.L, x0, T, rng);
            bool all_contained = true, all_safe = true;
            for (int k = 0; k <= T; ++k) {
                const Eigen::VectorXd x = r.states.row(k);
                const bool valid = k <= r.valid_steps;
                const bool contained =
                    valid && x.dot(pci.P * x) <= 1.0 + kMembershipTol;
                const bool safe = valid && in_halfspaces(constraints.state_rows, x);
                if (contained) ++counts.in_set[k];
                all_contained = all_contained && contained;
                all_safe = all_safe && safe;
                if (k < T && contained) {
                    ++counts.input_denom[k];
                    if (in_halfspaces(constraints.input_rows, Eigen::VectorXd(pci.L * x)))
                        ++counts.input_ok[k];
                }
            }
            if (all_contained) ++counts.all_time_contained;
            if (all_safe) ++counts.all_time_safe;
        }
    };

    Counts total(T);
    const std::int64_t R = config.n_rollouts;
    if (config.jobs <= 1) {
        run_range(0, R, total);
    } else {
        const int threads = std::min<std::int64_t>(config.jobs, R);
        std::vector<Counts> partial(threads, Counts(T));
        std::vector<std::thread> workers;
        for (int t = 0; t < threads; ++t) {
            const std::int64_t lo = R * t / threads;
            const std::int64_t hi = R * (t + 1) / threads;
            workers.emplace_back([&, t, lo, hi] { run_range(lo, hi, partial[t]); });
        }
        for (auto& w : workers) w.join();
        for (const auto& c : partial) total.add(c);
    }

    McReport report;
    report.rollouts = R;
    std::int64_t worst_in_set = R;
    for (int k = 0; k <= T; ++k) worst_in_set = std::min(worst_in_set, total.in_set[k]);
    report.min_k_containment = static_cast<double>(worst_in_set) / static_cast<double>(R);
    report.min_k_containment_ci = wilson_interval(worst_in_set, R);

    double worst_input = 1.0;
    WilsonInterval worst_input_ci;
    for (int k = 0; k < T; ++k) {
        if (total.input_denom[k] == 0) continue;  // vacuous at this step
        const double frac = static_cast<double>(total.input_ok[k]) /
                            static_cast<double>(total.input_denom[k]);
        if (frac <= worst_input) {
            worst_input = frac;
            worst_input_ci = wilson_interval(total.input_ok[k], total.input_denom[k]);
        }
    }
    report.input_admissibility = worst_input;
    report.input_admissibility_ci = worst_input_ci;

    report.all_time_safety = static_cast<double>(total.all_time_safe) / static_cast<double>(R);
    report.all_time_safety_ci = wilson_interval(total.all_time_safe, R);
    report.all_time_containment =
        static_cast<double>(total.all_time_contained) / static_cast<double>(R);
    report.all_time_containment_ci = wilson_interval(total.all_time_contained, R);
    return report;
}

StepFn posterior_step_fn(const GpssmModel& model) {
    return [&model](const Eigen::VectorXd& x, const Eigen::VectorXd& u, std::mt19937_64& rng) {
        return sample_posterior_step(model, x, u, rng);
    };
}

Eigen::VectorXd ground_truth_quadrotor(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                       const QuadrotorParams& params) {
    if (x.size() != 4 || u.size() != 2)
        throw std::invalid_argument("ground_truth_quadrotor: expects 4 states, 2 inputs");
    if (!std::isfinite(params.dt) || !std::isfinite(params.drag) ||
        !std::isfinite(params.actuator_gain))
        throw std::invalid_argument("ground_truth_quadrotor: non-finite parameters");
    const double dt = params.dt;
    Eigen::VectorXd next(4);
    for (int axis = 0; axis < 2; ++axis) {
        const double pos = x(2 * axis), vel = x(2 * axis + 1);
        const double acc =
            params.actuator_gain * u(axis) - params.drag * vel * std::abs(vel);
        next(2 * axis) = pos + dt * vel + 0.5 * dt * dt * acc;
        next(2 * axis + 1) = vel + dt * acc;
    }
    return next;
}

StepFn ground_truth_step_fn(const QuadrotorParams& params, const Eigen::VectorXd& q_diag) {
    if (q_diag.size() != 4)
        throw std::invalid_argument("ground_truth_step_fn: q_diag must have 4 entries");
    const Eigen::VectorXd noise_std = q_diag.cwiseMax(0.0).cwiseSqrt();
    return [params, noise_std](const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                               std::mt19937_64& rng) {
        Eigen::VectorXd next = ground_truth_quadrotor(x, u, params);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index i = 0; i < next.size(); ++i) next(i) += noise_std(i) * normal(rng);
        return next;
    };
}

}  // namespace pcis
