// subflow command line: field sampling, forward simulation, gradient
// checking, the two training stages, the scratch baseline and ensemble
// evaluation. Every run writes a reproducibility manifest into --out-dir.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "subflow/subflow.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace subflow;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    int threads = 0;
    std::string out_dir = "out";
};

struct Workspace {
    RunConfig cfg;
    Grid grid;
    GeostatConfig geo;
    KLBasis basis;
    WellSet wells;
    FluidProps fluid;
    FieldSampler sampler;
    int threads = 1;
};

Workspace make_workspace(const CommonOptions& opts, bool need_basis = true) {
    Workspace ws;
    ws.cfg = opts.config_path.empty() ? RunConfig{} : parse_config_file(opts.config_path);
    if (opts.seed_override) {
        ws.cfg.train_seed = *opts.seed_override;
    }
    const auto issues = validate_config(ws.cfg);
    if (!issues.empty()) {
        throw ConfigError(issues);
    }
    ws.grid = grid_from_config(ws.cfg);
    ws.geo = geostat_from_config(ws.cfg);
    ws.wells = wells_from_config(ws.cfg, ws.grid);
    ws.fluid = fluid_from_config(ws.cfg);
    const int requested = opts.threads > 0 ? opts.threads : ws.cfg.run_threads;
    ws.threads = requested > 0 ? requested : hardware_threads();
    if (need_basis) {
        ws.basis = build_kl_basis(ws.grid, ws.geo);
        ws.sampler = FieldSampler{&ws.basis, ws.geo};
    }
    return ws;
}

void write_manifest(const CommonOptions& opts, const Workspace& ws, const std::string& command,
                    const json& extra = json::object()) {
    fs::create_directories(opts.out_dir);
    json manifest;
    manifest["command"] = command;
    manifest["version"] = SUBFLOW_VERSION_STRING;
    manifest["compiler"] = __VERSION__;
    manifest["seed"] = ws.cfg.train_seed;
    manifest["threads"] = ws.threads;
    char hash_hex[32];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(config_hash(ws.cfg)));
    manifest["config_hash"] = hash_hex;
    manifest["config"] = serialize_config(ws.cfg);
    for (auto it = extra.begin(); it != extra.end(); ++it) {
        manifest[it.key()] = it.value();
    }
    std::ofstream out(opts.out_dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
}

PermeabilityField field_for_simulation(const Workspace& ws, const std::string& field_path,
                                       std::uint64_t field_seed) {
    if (!field_path.empty()) {
        const LoadedField loaded = load_field(field_path);
        if (loaded.nx != ws.grid.nx || loaded.ny != ws.grid.ny) {
            throw Error("field file is " + std::to_string(loaded.nx) + "x" +
                        std::to_string(loaded.ny) + " but the grid is " +
                        std::to_string(ws.grid.nx) + "x" + std::to_string(ws.grid.ny));
        }
        return PermeabilityField{loaded.values};
    }
    return ws.sampler.sample(derive_seed(ws.cfg.train_seed, SeedStream::sampling, field_seed));
}

TwoPhaseProblem two_phase_problem(const Workspace& ws, PermeabilityField perm) {
    TwoPhaseProblem prob;
    prob.grid = ws.grid;
    prob.perm = std::move(perm);
    prob.wells = ws.wells;
    prob.props = ws.fluid;
    prob.bc_pressure = ws.cfg.physics_bc_pressure;
    prob.cfl_factor = ws.cfg.physics_cfl_factor;
    prob.max_steps = ws.cfg.physics_max_steps;
    return prob;
}

SaturationField initial_saturation(const Workspace& ws) {
    SaturationField s;
    s.values.assign(static_cast<std::size_t>(ws.grid.cells()), ws.cfg.physics_initial_saturation);
    return s;
}

RateSurrogate fresh_surrogate(const Workspace& ws) {
    const auto [mean, stddev] = normalization_from_config(ws.cfg);
    return make_rate_surrogate(mean, stddev, ws.cfg.wells_injection_rate,
                               derive_seed(ws.cfg.train_seed, SeedStream::sampling, 0xC0FFEE));
}

RateSurrogate load_compatible_checkpoint(const Workspace& ws, const std::string& path) {
    RateSurrogate s = load_checkpoint(path);
    const auto [mean, stddev] = normalization_from_config(ws.cfg);
    check_checkpoint_compatibility(s, mean, stddev, ws.cfg.wells_injection_rate);
    return s;
}

EpochCallback progress_printer() {
    return [](const LossRecord& rec) {
        std::printf("epoch %4d [%s]  train_rmse_pa=%.6g  val_rmse_pa=%.6g  sim_calls=%ld  wall_s=%.1f\n",
                    rec.epoch, rec.stage.c_str(), rec.train_rmse, rec.val_rmse, rec.sim_calls,
                    rec.wall_s);
        std::fflush(stdout);
    };
}

int cmd_sample_fields(const CommonOptions& opts, int count) {
    Workspace ws = make_workspace(opts);
    write_manifest(opts, ws, "sample-fields", {{"count", count}});
    for (int i = 0; i < count; ++i) {
        const std::uint64_t seed =
            derive_seed(ws.cfg.train_seed, SeedStream::sampling, static_cast<std::uint64_t>(i));
        const PermeabilityField field = sample_field(ws.basis, ws.geo, seed);
        char name[64];
        std::snprintf(name, sizeof(name), "field_%04d.bin", i);
        const std::string path = opts.out_dir + "/" + name;
        save_field(path, ws.grid, field.values);
        double lo = field.values[0], hi = field.values[0];
        for (double v : field.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        std::printf("%s seed=%llu k_min=%.3e k_max=%.3e\n", path.c_str(),
                    static_cast<unsigned long long>(seed), lo, hi);
    }
    return 0;
}

int cmd_simulate(const CommonOptions& opts, const std::string& physics, double extraction,
                 const std::string& field_path, std::uint64_t field_seed, double horizon_override,
                 const std::string& trace_path) {
    Workspace ws = make_workspace(opts);
    write_manifest(opts, ws, "simulate",
                   {{"physics", physics}, {"extraction_rate", extraction}});
    const PermeabilityField field = field_for_simulation(ws, field_path, field_seed);

    if (physics == "single") {
        const SinglePhaseProblem prob{ws.grid, field, ws.wells, ws.cfg.physics_bc_pressure};
        const double p = critical_pressure(prob, extraction);
        std::printf("physics single\ncritical_pressure_pa %.17g\n", p);
        return 0;
    }
    const double horizon = horizon_override > 0.0 ? horizon_override : ws.cfg.physics_horizon_s;
    TwoPhaseProblem prob = two_phase_problem(ws, field);
    const bool want_trace = !trace_path.empty();
    const MultiphaseResult result =
        simulate_multiphase(prob, extraction, horizon, initial_saturation(ws), want_trace);
    std::printf("physics multi\nhorizon_s %.17g\nsteps %zu\ncritical_pressure_pa %.17g\n", horizon,
                result.trace.steps.size(), result.critical_pressure);
    if (want_trace) {
        save_trace(trace_path, ws.grid, result.trace);
        std::printf("trace %s\n", trace_path.c_str());
    }
    return 0;
}

int cmd_gradcheck(const CommonOptions& opts, const std::string& physics, int cases,
                  double horizon_override) {
    Workspace ws = make_workspace(opts);
    write_manifest(opts, ws, "gradcheck", {{"physics", physics}, {"cases", cases}});

    std::mt19937_64 rng(splitmix64(ws.cfg.train_seed ^ 0x6772616463686bULL));
    std::uniform_real_distribution<> rate_dist(0.0, ws.cfg.wells_injection_rate);
    double worst = 0.0;
    const double tolerance = physics == "single" ? 1e-6 : 1e-4;

    for (int c = 0; c < cases; ++c) {
        const PermeabilityField field =
            ws.sampler.sample(derive_seed(ws.cfg.train_seed, SeedStream::sampling, 0xFD00 + c));
        const double q = rate_dist(rng);
        double adj = 0.0, fd = 0.0;
        if (physics == "single") {
            const SinglePhaseProblem prob{ws.grid, field, ws.wells, ws.cfg.physics_bc_pressure};
            adj = gradient_steady(prob, q);
            const double h = std::max(1e-6 * std::abs(q), 1e-9);
            fd = (critical_pressure(prob, q + h) - critical_pressure(prob, q - h)) / (2.0 * h);
        } else {
            TwoPhaseProblem prob = two_phase_problem(ws, field);
            const double horizon = horizon_override > 0.0 ? horizon_override : 2.5e5;
            const SaturationField s0 = initial_saturation(ws);
            const MultiphaseResult fwd = simulate_multiphase(prob, q, horizon, s0);
            adj = gradient_multiphase(prob, q, horizon, fwd.trace);
            const TimeStepSchedule sched = schedule_from_trace(fwd.trace, prob.cfl_factor);
            const double h = std::max(1e-6 * std::abs(q), 1e-9);
            const double pp = simulate_with_schedule(prob, q + h, sched, s0, false).critical_pressure;
            const double pm = simulate_with_schedule(prob, q - h, sched, s0, false).critical_pressure;
            fd = (pp - pm) / (2.0 * h);
        }
        const double rel = std::abs(adj - fd) / std::max(std::abs(fd), 1e-30);
        worst = std::max(worst, rel);
    }
    std::printf("physics %s\ncases %d\nmax_relative_error %.3e\ntolerance %.0e\n%s\n",
                physics.c_str(), cases, worst, tolerance, worst <= tolerance ? "PASS" : "FAIL");
    return worst <= tolerance ? 0 : 1;
}

int cmd_pretrain(const CommonOptions& opts) {
    Workspace ws = make_workspace(opts);
    write_manifest(opts, ws, "pretrain");
    const TrainingConfig train = training_from_config(ws.cfg, ws.threads);

    SteadyPressureResponse physics(ws.grid, ws.wells, ws.cfg.physics_bc_pressure);
    RateSurrogate surrogate = fresh_surrogate(ws);
    const auto validation =
        make_validation_fields(ws.sampler, train.validation_size, train.seed);

    std::vector<LossRecord> history;
    const auto start = std::chrono::steady_clock::now();
    run_training_stage(surrogate, train, "pretrain", train.epochs_pretrain, 0, physics, ws.sampler,
                       validation, 0, start, history, progress_printer());

    save_checkpoint(opts.out_dir + "/pretrained.ckpt", surrogate);
    write_loss_csv(opts.out_dir + "/loss.csv", history);
    write_timing_csv(opts.out_dir + "/timing.csv", history);
    std::printf("checkpoint %s/pretrained.ckpt\n", opts.out_dir.c_str());
    return 0;
}

int cmd_finetune(const CommonOptions& opts, const std::string& checkpoint) {
    Workspace ws = make_workspace(opts);
    write_manifest(opts, ws, "finetune", {{"checkpoint", checkpoint}});
    const TrainingConfig train = training_from_config(ws.cfg, ws.threads);

    RateSurrogate surrogate = load_compatible_checkpoint(ws, checkpoint);
    TransientPressureResponse physics(ws.grid, ws.wells, ws.fluid, ws.cfg.physics_bc_pressure,
                                      ws.cfg.physics_cfl_factor, ws.cfg.physics_max_steps,
                                      ws.cfg.physics_horizon_s, ws.cfg.physics_initial_saturation);
    const auto validation =
        make_validation_fields(ws.sampler, train.validation_size, train.seed);

    // Field seeds continue after the configured pretraining epochs so the two
    // stages never revisit the same realizations.
    std::vector<LossRecord> history;
    const auto start = std::chrono::steady_clock::now();
    run_training_stage(surrogate, train, "finetune", train.epochs_finetune, train.epochs_pretrain,
                       physics, ws.sampler, validation, 0, start, history, progress_printer());

    save_checkpoint(opts.out_dir + "/finetuned.ckpt", surrogate);
    write_loss_csv(opts.out_dir + "/loss.csv", history);
    write_timing_csv(opts.out_dir + "/timing.csv", history);
    std::printf("checkpoint %s/finetuned.ckpt\n", opts.out_dir.c_str());
    return 0;
}

int cmd_train_scratch(const CommonOptions& opts) {
    Workspace ws = make_workspace(opts);
    write_manifest(opts, ws, "train-scratch");
    const TrainingConfig train = training_from_config(ws.cfg, ws.threads);

    RateSurrogate surrogate = fresh_surrogate(ws);
    TransientPressureResponse physics(ws.grid, ws.wells, ws.fluid, ws.cfg.physics_bc_pressure,
                                      ws.cfg.physics_cfl_factor, ws.cfg.physics_max_steps,
                                      ws.cfg.physics_horizon_s, ws.cfg.physics_initial_saturation);
    const auto validation =
        make_validation_fields(ws.sampler, train.validation_size, train.seed);

    const auto history =
        run_scratch(surrogate, train, physics, ws.sampler, validation, progress_printer());

    save_checkpoint(opts.out_dir + "/scratch.ckpt", surrogate);
    write_loss_csv(opts.out_dir + "/loss.csv", history);
    write_timing_csv(opts.out_dir + "/timing.csv", history);
    std::printf("checkpoint %s/scratch.ckpt\n", opts.out_dir.c_str());
    return 0;
}

int cmd_evaluate(const CommonOptions& opts, const std::string& checkpoint, int samples_override) {
    Workspace ws = make_workspace(opts);
    const int samples = samples_override > 0 ? samples_override : ws.cfg.eval_samples;
    write_manifest(opts, ws, "evaluate", {{"checkpoint", checkpoint}, {"samples", samples}});

    RateSurrogate surrogate = load_compatible_checkpoint(ws, checkpoint);
    TransientPressureResponse physics(ws.grid, ws.wells, ws.fluid, ws.cfg.physics_bc_pressure,
                                      ws.cfg.physics_cfl_factor, ws.cfg.physics_max_steps,
                                      ws.cfg.physics_horizon_s, ws.cfg.physics_initial_saturation);

    const EvalReport report =
        evaluate_ensemble(surrogate, ws.sampler, physics, samples, ws.cfg.train_seed,
                          ws.cfg.train_target_pressure, ws.cfg.eval_pressure_threshold, ws.threads);
    emit_report(report, opts.out_dir);

    const EvalSummary& s = report.summary;
    std::printf("samples %d\nfailures %d\nrate_mean_m3_s %.6g\nrate_median_m3_s %.6g\n"
                "rate_p90_m3_s %.6g\nrate_mean_fraction_of_injection %.4f\n"
                "pressure_rmse_pa %.6g\nfraction_within_threshold %.4f\nthreshold_pa %.6g\n",
                s.samples, s.failures, s.rate_mean, s.rate_median, s.rate_p90,
                s.rate_mean / ws.cfg.wells_injection_rate, s.pressure_rmse, s.fraction_within,
                s.pressure_threshold);
    std::printf("report %s/eval.csv\n", opts.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"subflow: differentiable subsurface-flow surrogate trainer"};
    app.require_subcommand(1);

    CommonOptions common;
    app.add_option("--config", common.config_path, "flat key = value configuration file");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override train.seed");
    app.add_option("--threads", common.threads, "override run.threads");
    app.add_option("--out-dir", common.out_dir, "output directory (default: ./out)");

    auto* sample = app.add_subcommand("sample-fields", "write permeability realizations to disk");
    int sample_count = 4;
    sample->add_option("--count", sample_count, "number of fields")->check(CLI::PositiveNumber);

    auto* simulate = app.add_subcommand("simulate", "one forward simulation on a sampled or loaded field");
    std::string sim_physics = "single";
    double sim_extraction = 0.0;
    std::string sim_field_path;
    std::uint64_t sim_field_seed = 0;
    double sim_horizon = 0.0;
    std::string sim_trace;
    simulate->add_option("--physics", sim_physics, "single | multi")
        ->check(CLI::IsMember({"single", "multi"}));
    simulate->add_option("--extraction", sim_extraction, "extraction rate [m^3/s]");
    simulate->add_option("--field", sim_field_path, "field file (SUBFLOW-FIELD v1)");
    simulate->add_option("--field-seed", sim_field_seed, "sample a fresh field with this index");
    simulate->add_option("--horizon", sim_horizon, "override physics.horizon_s [s] (multi only)");
    simulate->add_option("--dump-trace", sim_trace, "write the step trace to this path (multi only)");

    auto* gradcheck = app.add_subcommand("gradcheck", "adjoint vs finite-difference check");
    std::string gc_physics = "single";
    int gc_cases = 0;
    double gc_horizon = 0.0;
    gradcheck->add_option("--physics", gc_physics, "single | multi")
        ->check(CLI::IsMember({"single", "multi"}));
    gradcheck->add_option("--cases", gc_cases, "number of random cases (default 50 single / 20 multi)");
    gradcheck->add_option("--horizon", gc_horizon, "override the multi gradcheck horizon [s]");

    auto* pretrain = app.add_subcommand("pretrain", "stage 1: train against steady single-phase flow");

    auto* finetune = app.add_subcommand("finetune", "stage 2: fine-tune against transient two-phase flow");
    std::string ft_checkpoint;
    finetune->add_option("--checkpoint", ft_checkpoint, "pretrained checkpoint")->required();

    auto* scratch = app.add_subcommand("train-scratch", "baseline: train against two-phase flow from random init");

    auto* evaluate = app.add_subcommand("evaluate", "ensemble evaluation of a trained checkpoint");
    std::string ev_checkpoint;
    int ev_samples = 0;
    evaluate->add_option("--checkpoint", ev_checkpoint, "trained checkpoint")->required();
    evaluate->add_option("--samples", ev_samples, "override eval.samples");

    CLI11_PARSE(app, argc, argv);
    if (*seed_opt) {
        common.seed_override = seed_value;
    }

    try {
        if (*sample) {
            return cmd_sample_fields(common, sample_count);
        }
        if (*simulate) {
            return cmd_simulate(common, sim_physics, sim_extraction, sim_field_path, sim_field_seed,
                                sim_horizon, sim_trace);
        }
        if (*gradcheck) {
            const int cases = gc_cases > 0 ? gc_cases : (gc_physics == "single" ? 50 : 20);
            return cmd_gradcheck(common, gc_physics, cases, gc_horizon);
        }
        if (*pretrain) {
            return cmd_pretrain(common);
        }
        if (*finetune) {
            return cmd_finetune(common, ft_checkpoint);
        }
        if (*scratch) {
            return cmd_train_scratch(common);
        }
        if (*evaluate) {
            return cmd_evaluate(common, ev_checkpoint, ev_samples);
        }
    } catch (const std::exception& e) {
        const json err = {{"error", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
