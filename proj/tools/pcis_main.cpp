#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "pcis/demo.hpp"
#include "pcis/io.hpp"
#include "pcis/rng.hpp"

namespace fs = std::filesystem;
using namespace pcis;

namespace {

// Exit codes: 0 success, 1 constraint/feasibility failure, 2 usage/IO error.
struct Verdict {
    std::string message;
};

class Stopwatch {
   public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

   private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

RunManifest make_manifest(const std::string& command, std::uint64_t seed,
                          const std::vector<std::string>& inputs, json config,
                          const Stopwatch& watch) {
    RunManifest m;
    m.command = command;
    m.seed = seed;
    m.config_echo = std::move(config);
    for (const auto& path : inputs) m.input_digests[path] = file_digest_hex(path);
    m.wall_clock_s = watch.seconds();
    return m;
}

int run_fit(const std::string& data_path, const std::string& out_path, int restarts,
            std::uint64_t seed, bool trajectory_mode, bool link_data) {
    Stopwatch watch;
    Dataset data = read_transitions_csv(data_path, trajectory_mode);
    MeanFit mean = fit_mean(data);
    KernelFit kernel_fit = fit_kernels(data, mean.residuals, restarts, seed);
    GpssmModel model(mean.A, mean.B, kernel_fit.kernels, kernel_fit.q_diag, std::move(data));

    UncertaintyBounds bounds;
    try {
        bounds = uncertainty_bounds(model);
    } catch (const std::runtime_error& e) {
        throw Verdict{std::string("fit: mean-correction bound check failed: ") + e.what()};
    }

    json doc = model_to_json(model, bounds);
    if (link_data) {
        doc.erase("dataset");
        doc["dataset_path"] = data_path;
    }
    json config{{"restarts", restarts},
                {"trajectory_mode", trajectory_mode},
                {"data", data_path}};
    doc["manifest"] =
        manifest_to_json(make_manifest("fit", seed, {data_path}, config, watch));
    write_json_file(out_path, doc);
    for (const auto& w : kernel_fit.diagnostics) std::cerr << "fit: " << w << "\n";
    std::cout << "fit: wrote " << out_path << " (N=" << model.data().size()
              << ", phi=" << bounds.phi << ")\n";
    return 0;
}

int run_synthesize(const std::string& model_path, const std::string& constraints_path,
                   const std::string& out_path, double delta, int eta_count, double p_init,
                   std::uint64_t seed, int jobs) {
    Stopwatch watch;
    LoadedModel loaded =
        model_from_json(read_json_file(model_path), fs::path(model_path).parent_path().string());
    PolytopeConstraints constraints = constraints_from_json(read_json_file(constraints_path));

    SynthesisConfig config;
    config.delta = delta;
    config.eta_grid = default_eta_grid(eta_count);
    config.p_init = p_init;
    config.jobs = jobs;

    PciResult result;
    try {
        result = synthesize(loaded.model.A(), loaded.model.B(), loaded.bounds, constraints,
                            config);
    } catch (const SynthesisInfeasible& e) {
        throw Verdict{std::string("synthesize: ") + e.what()};
    }
    for (const auto& w : result.warnings) std::cerr << "synthesize: warning: " << w << "\n";

    json config_echo{{"delta", delta}, {"eta_grid", eta_count},     {"p_init", p_init},
                     {"jobs", jobs},   {"model", model_path},       {"constraints", constraints_path}};
    json doc = pci_to_json(result);
    doc["manifest"] = manifest_to_json(
        make_manifest("synthesize", seed, {model_path, constraints_path}, config_echo, watch));
    write_json_file(out_path, doc);
    std::cout << "synthesize: p* = " << result.p_star << ", eta* = " << result.eta_star
              << ", logdet = " << result.logdet << " -> " << out_path << "\n";
    return 0;
}

int run_verify(const std::string& model_path, const std::string& pci_path,
               const std::string& constraints_path, int alpha_count) {
    LoadedModel loaded =
        model_from_json(read_json_file(model_path), fs::path(model_path).parent_path().string());
    PciResult pci = pci_from_json(read_json_file(pci_path));
    PolytopeConstraints constraints;
    bool have_constraints = !constraints_path.empty();
    if (have_constraints)
        constraints = constraints_from_json(read_json_file(constraints_path));

    const Eigen::MatrixXd& A = loaded.model.A();
    const Eigen::MatrixXd& B = loaded.model.B();

    // Certificate sanity: the stored (P, L, eta) must satisfy the
    // contraction inequality before the LMI sweep is attempted.
    const Eigen::MatrixXd A_bl = A + B * pci.L;
    Eigen::MatrixXd G = congruence_t(A_bl, pci.P) - pci.eta_star * pci.P;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double contraction_excess =
        es.eigenvalues().maxCoeff() / std::max(pci.P.operatorNorm(), 1e-300);
    if (contraction_excess > 1e-6)
        throw Verdict{"verify: contraction constraint violated: lambda_max((A+BL)^T P (A+BL) - "
                      "eta P) = " +
                      std::to_string(contraction_excess) + " * ||P||"};

    std::vector<double> grid;
    const auto full = default_alpha_grid();
    for (int i = 0; i < alpha_count && i < static_cast<int>(full.size()); ++i)
        grid.push_back(full[static_cast<size_t>(i) * full.size() / alpha_count]);
    if (grid.empty()) grid = full;

    VerificationReport report =
        verify_controller(A, B, loaded.bounds, pci.L, pci.p_star, grid,
                          have_constraints ? &constraints : nullptr);
    if (!report.feasible)
        throw Verdict{"verify: invariance LMI infeasible at all " +
                      std::to_string(grid.size()) + " attempted alpha grid points (p = " +
                      std::to_string(pci.p_star) + ")"};
    std::cout << "verify: invariance LMI feasible at alpha = " << report.alpha << "\n";
    if (report.constraints_checked) {
        for (size_t i = 0; i < report.state_margins.size(); ++i)
            if (report.state_margins[i] > 1.0 + 1e-9)
                throw Verdict{"verify: state constraint row " + std::to_string(i) +
                              " violated: margin " + std::to_string(report.state_margins[i])};
        for (size_t i = 0; i < report.input_margins.size(); ++i)
            if (report.input_margins[i] > 1.0 + 1e-9)
                throw Verdict{"verify: input constraint row " + std::to_string(i) +
                              " violated: margin " + std::to_string(report.input_margins[i])};
        std::cout << "verify: all constraint margins within bounds\n";
    }
    return 0;
}

int run_simulate(const std::string& model_path, const std::string& pci_path,
                 const std::string& constraints_path, const std::string& out_path,
                 const std::string& mode, int rollouts, int horizon, std::uint64_t seed,
                 int jobs, const std::string& dump_csv, const QuadrotorParams& gt_params) {
    Stopwatch watch;
    LoadedModel loaded =
        model_from_json(read_json_file(model_path), fs::path(model_path).parent_path().string());
    PciResult pci = pci_from_json(read_json_file(pci_path));
    PolytopeConstraints constraints = constraints_from_json(read_json_file(constraints_path));

    StepFn step;
    if (mode == "iid-posterior") {
        step = posterior_step_fn(loaded.model);
    } else if (mode == "ground-truth") {
        if (loaded.model.n() != 4 || loaded.model.m() != 2)
            throw std::runtime_error(
                "simulate: ground-truth mode provides the planar quadrotor (n=4, m=2)");
        step = ground_truth_step_fn(gt_params, loaded.model.q_diag());
    } else {
        throw std::runtime_error("simulate: unknown mode '" + mode + "'");
    }

    RolloutConfig config;
    config.horizon = horizon;
    config.n_rollouts = rollouts;
    config.initial_state_mode = InitialStateMode::UniformInSet;
    config.seed = seed;
    config.jobs = jobs;
    McReport report = monte_carlo(step, pci, constraints, config);

    json config_echo{{"mode", mode}, {"rollouts", rollouts}, {"horizon", horizon},
                     {"jobs", jobs}, {"model", model_path},  {"pci", pci_path}};
    json doc = report_to_json(report);
    doc["manifest"] = manifest_to_json(make_manifest(
        "simulate", seed, {model_path, pci_path, constraints_path}, config_echo, watch));
    write_json_file(out_path, doc);

    if (!dump_csv.empty()) {
        std::ofstream out(dump_csv);
        if (!out) throw std::runtime_error("cannot open dump file: " + dump_csv);
        out.precision(17);
        const Eigen::Index n = loaded.model.n(), m = loaded.model.m();
        out << "rollout_id,k";
        for (Eigen::Index i = 0; i < n; ++i) out << ",x" << (i + 1);
        for (Eigen::Index i = 0; i < m; ++i) out << ",u" << (i + 1);
        out << ",in_pci,in_X,in_U\n";
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esP(pci.P);
        const Eigen::MatrixXd W = congruence(
            esP.eigenvectors(),
            Eigen::MatrixXd(esP.eigenvalues().cwiseInverse().asDiagonal()));
        const Ellipsoidd set(Eigen::VectorXd::Zero(n), W);
        for (int id = 0; id < rollouts; ++id) {
            std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(id)));
            const Eigen::VectorXd x0 = sample_uniform(set, rng);
            const Rollout r = rollout(step, pci.L, x0, horizon, rng);
            for (int k = 0; k <= horizon; ++k) {
                const Eigen::VectorXd x = r.states.row(k);
                const Eigen::VectorXd u = pci.L * x;
                const bool valid = k <= r.valid_steps;
                bool in_pci = valid && x.dot(pci.P * x) <= 1.0 + 1e-9;
                bool in_x = valid, in_u = valid;
                for (const auto& row : constraints.state_rows)
                    in_x = in_x && row.dot(x) <= 1.0 + 1e-9;
                for (const auto& row : constraints.input_rows)
                    in_u = in_u && row.dot(u) <= 1.0 + 1e-9;
                out << id << "," << k;
                for (Eigen::Index i = 0; i < n; ++i) out << "," << x(i);
                for (Eigen::Index i = 0; i < m; ++i) out << "," << u(i);
                out << "," << (in_pci ? 1 : 0) << "," << (in_x ? 1 : 0) << ","
                    << (in_u ? 1 : 0) << "\n";
            }
        }
    }

    std::cout << "simulate: min_k containment = " << report.min_k_containment
              << ", all-time safety = " << report.all_time_safety << " -> " << out_path << "\n";
    return 0;
}

int run_demo(const std::string& out_dir, std::uint64_t seed, int transitions, int restarts,
             int rollouts, int horizon, int jobs) {
    Stopwatch watch;
    fs::create_directories(out_dir);
    DemoConfig config;
    config.seed = seed;
    config.transitions = transitions;
    config.restarts = restarts;
    config.rollouts = rollouts;
    config.horizon = horizon;
    config.jobs = jobs;

    DemoResult demo = run_quadrotor_demo(config);

    const std::string traj = out_dir + "/traj.csv";
    write_transitions_csv(traj, demo.data);
    json config_echo{{"transitions", transitions}, {"restarts", restarts},
                     {"rollouts", rollouts},       {"horizon", horizon},
                     {"jobs", jobs},               {"out_dir", out_dir}};

    json model_doc = model_to_json(demo.model, demo.bounds);
    model_doc["manifest"] =
        manifest_to_json(make_manifest("demo-quadrotor", seed, {traj}, config_echo, watch));
    write_json_file(out_dir + "/model.json", model_doc);

    json cons_doc = constraints_to_json(demo.constraints);
    cons_doc["manifest"] =
        manifest_to_json(make_manifest("demo-quadrotor", seed, {}, config_echo, watch));
    write_json_file(out_dir + "/constraints.json", cons_doc);

    json pci_doc = pci_to_json(demo.pci);
    pci_doc["manifest"] =
        manifest_to_json(make_manifest("demo-quadrotor", seed, {}, config_echo, watch));
    write_json_file(out_dir + "/pci.json", pci_doc);

    json report_doc = report_to_json(demo.report);
    report_doc["manifest"] =
        manifest_to_json(make_manifest("demo-quadrotor", seed, {}, config_echo, watch));
    write_json_file(out_dir + "/report.json", report_doc);

    std::cout << "demo-quadrotor: p* = " << demo.pci.p_star << ", eta* = " << demo.pci.eta_star
              << "\n"
              << "  verification feasible: " << (demo.verification.feasible ? "yes" : "no")
              << "\n"
              << "  min_k containment = " << demo.report.min_k_containment << "\n"
              << "  all-time state safety = " << demo.report.all_time_safety << "\n"
              << "  artifacts in " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GPSSM probabilistic controlled invariant set toolkit"};
    app.require_subcommand(1);

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a GPSSM from trajectory data");
    std::string fit_data, fit_out;
    int fit_restarts = 5;
    std::uint64_t fit_seed = 0;
    bool fit_traj_mode = false, fit_link = false;
    fit->add_option("--data", fit_data, "transitions CSV")->required();
    fit->add_option("--out", fit_out, "output model.json")->required();
    fit->add_option("--restarts", fit_restarts, "hyperparameter restarts");
    fit->add_option("--seed", fit_seed, "random seed");
    fit->add_flag("--trajectory", fit_traj_mode, "input is k,x...,u... trajectory format");
    fit->add_flag("--link-data", fit_link, "reference the CSV instead of embedding the data");

    // synthesize
    auto* synth = app.add_subcommand("synthesize", "Design the PCI set and feedback gain");
    std::string synth_model, synth_constraints, synth_out;
    double synth_delta = 1e-3, synth_p_init = 0.5;
    int synth_eta = 20, synth_jobs = 1;
    std::uint64_t synth_seed = 0;
    synth->add_option("--model", synth_model, "model.json")->required();
    synth->add_option("--constraints", synth_constraints, "constraints.json")->required();
    synth->add_option("--out", synth_out, "output pci.json")->required();
    synth->add_option("--delta", synth_delta, "bisection precision");
    synth->add_option("--eta-grid", synth_eta, "number of eta samples");
    synth->add_option("--p-init", synth_p_init, "initial probability probe");
    synth->add_option("--seed", synth_seed, "random seed (recorded in the manifest)");
    synth->add_option("--jobs", synth_jobs, "parallel eta cells");

    // verify
    auto* verify = app.add_subcommand("verify", "Check a synthesized certificate");
    std::string verify_model, verify_pci, verify_constraints;
    int verify_alpha = 50;
    verify->add_option("--model", verify_model, "model.json")->required();
    verify->add_option("--pci", verify_pci, "pci.json")->required();
    verify->add_option("--constraints", verify_constraints, "constraints.json (optional)");
    verify->add_option("--alpha-grid", verify_alpha, "number of alpha samples");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Monte Carlo validation of a certificate");
    std::string sim_model, sim_pci, sim_constraints, sim_out, sim_dump;
    std::string sim_mode = "iid-posterior";
    int sim_rollouts = 1000, sim_horizon = 100, sim_jobs = 1;
    std::uint64_t sim_seed = 0;
    QuadrotorParams sim_gt;
    sim->add_option("--model", sim_model, "model.json")->required();
    sim->add_option("--pci", sim_pci, "pci.json")->required();
    sim->add_option("--constraints", sim_constraints, "constraints.json")->required();
    sim->add_option("--out", sim_out, "output report.json")->required();
    sim->add_option("--mode", sim_mode, "iid-posterior | ground-truth");
    sim->add_option("--rollouts", sim_rollouts, "number of rollouts");
    sim->add_option("--horizon", sim_horizon, "steps per rollout");
    sim->add_option("--seed", sim_seed, "random seed");
    sim->add_option("--jobs", sim_jobs, "parallel rollouts");
    sim->add_option("--dump-csv", sim_dump, "optional per-step trajectory dump");
    sim->add_option("--gt-dt", sim_gt.dt, "ground-truth time step");
    sim->add_option("--gt-drag", sim_gt.drag, "ground-truth drag coefficient");
    sim->add_option("--gt-gain", sim_gt.actuator_gain, "ground-truth actuator gain");

    // demo-quadrotor
    auto* demo = app.add_subcommand("demo-quadrotor",
                                    "End-to-end synthetic quadrotor pipeline");
    std::string demo_dir = "demo_out";
    std::uint64_t demo_seed = 0;
    int demo_transitions = 500, demo_restarts = 2, demo_rollouts = 10000, demo_horizon = 100,
        demo_jobs = 1;
    demo->add_option("--out-dir", demo_dir, "output directory");
    demo->add_option("--seed", demo_seed, "random seed");
    demo->add_option("--transitions", demo_transitions, "training transitions");
    demo->add_option("--restarts", demo_restarts, "hyperparameter restarts");
    demo->add_option("--rollouts", demo_rollouts, "Monte Carlo rollouts");
    demo->add_option("--horizon", demo_horizon, "Monte Carlo horizon");
    demo->add_option("--jobs", demo_jobs, "parallelism");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (fit->parsed())
            return run_fit(fit_data, fit_out, fit_restarts, fit_seed, fit_traj_mode, fit_link);
        if (synth->parsed())
            return run_synthesize(synth_model, synth_constraints, synth_out, synth_delta,
                                  synth_eta, synth_p_init, synth_seed, synth_jobs);
        if (verify->parsed())
            return run_verify(verify_model, verify_pci, verify_constraints, verify_alpha);
        if (sim->parsed())
            return run_simulate(sim_model, sim_pci, sim_constraints, sim_out, sim_mode,
                                sim_rollouts, sim_horizon, sim_seed, sim_jobs, sim_dump,
                                sim_gt);
        if (demo->parsed())
            return run_demo(demo_dir, demo_seed, demo_transitions, demo_restarts,
                            demo_rollouts, demo_horizon, demo_jobs);
    } catch (const Verdict& v) {
        std::cerr << v.message << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
