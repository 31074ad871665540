#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "subflow/errors.hpp"
#include "subflow/geostats.hpp"
#include "subflow/grid.hpp"
#include "subflow/io.hpp"
#include "subflow/optimizer.hpp"
#include "subflow/parallel.hpp"
#include "subflow/rng.hpp"
#include "subflow/single_phase.hpp"
#include "subflow/surrogate.hpp"
#include "subflow/two_phase.hpp"

namespace subflow {

/// Training loss: sum of squared deviations of the simulated critical-cell
/// pressures from the prescribed target.
inline double squared_error_loss(std::span<const double> simulated_pressures, double target) {
    if (simulated_pressures.empty()) {
        throw std::invalid_argument("squared_error_loss: empty batch");
    }
    double loss = 0.0;
    for (double p : simulated_pressures) {
        if (!std::isfinite(p)) {
            throw Error("squared_error_loss: non-finite simulated pressure");
        }
        const double e = p - target;
        loss += e * e;
    }
    return loss;
}

/// RMSE(theta) = sqrt(L / (N_b * N_s)) [Pa].
inline double rmse_from_loss(double loss, int n_batches, int samples_per_batch) {
    const long n = static_cast<long>(n_batches) * samples_per_batch;
    if (n < 1) {
        throw std::invalid_argument("rmse_from_loss: batch counts must be >= 1");
    }
    return std::sqrt(loss / static_cast<double>(n));
}

/// Physics seen by the trainer: the critical-cell pressure response to an
/// extraction rate on a given permeability field, with its derivative.
/// Implementations are safe to call concurrently; the call counter feeds the
/// cost ledger.
class PressureResponse {
public:
    virtual ~PressureResponse() = default;

    /// Simulated critical pressure [Pa].
    virtual double evaluate(const PermeabilityField& perm, double extraction_rate) = 0;
    /// (critical pressure, d critical pressure / d extraction rate).
    virtual std::pair<double, double> evaluate_with_gradient(const PermeabilityField& perm,
                                                             double extraction_rate) = 0;
    virtual std::string name() const = 0;

    long simulator_calls() const { return calls_.load(std::memory_order_relaxed); }

protected:
    void count_call() { calls_.fetch_add(1, std::memory_order_relaxed); }

private:
    std::atomic<long> calls_{0};
};

/// Steady single-phase response (pretraining physics). One linear solve per
/// evaluation plus one adjoint solve for the gradient.
class SteadyPressureResponse final : public PressureResponse {
public:
    SteadyPressureResponse(Grid grid, WellSet wells, double bc_pressure)
        : grid_(grid), wells_(wells), bc_pressure_(bc_pressure) {}

    double evaluate(const PermeabilityField& perm, double extraction_rate) override {
        count_call();
        return critical_pressure(problem(perm), extraction_rate);
    }

    std::pair<double, double> evaluate_with_gradient(const PermeabilityField& perm,
                                                     double extraction_rate) override {
        count_call();
        const SinglePhaseProblem prob = problem(perm);
        return {critical_pressure(prob, extraction_rate), gradient_steady(prob, extraction_rate)};
    }

    std::string name() const override { return "single"; }

private:
    SinglePhaseProblem problem(const PermeabilityField& perm) const {
        return SinglePhaseProblem{grid_, perm, wells_, bc_pressure_};
    }

    Grid grid_;
    WellSet wells_;
    double bc_pressure_;
};

/// Transient two-phase IMPES response (fine-tuning physics): terminal
/// critical pressure after simulating the configured horizon, with the
/// reverse-mode gradient through all recorded steps.
class TransientPressureResponse final : public PressureResponse {
public:
    TransientPressureResponse(Grid grid, WellSet wells, FluidProps props, double bc_pressure,
                              double cfl_factor, int max_steps, double horizon,
                              double initial_saturation)
        : horizon_(horizon), initial_saturation_(initial_saturation) {
        base_.grid = grid;
        base_.wells = wells;
        base_.props = props;
        base_.bc_pressure = bc_pressure;
        base_.cfl_factor = cfl_factor;
        base_.max_steps = max_steps;
    }

    double evaluate(const PermeabilityField& perm, double extraction_rate) override {
        count_call();
        TwoPhaseProblem prob = base_;
        prob.perm = perm;
        return simulate_multiphase(prob, extraction_rate, horizon_, initial_field(),
                                   /*keep_trace=*/false)
            .critical_pressure;
    }

    std::pair<double, double> evaluate_with_gradient(const PermeabilityField& perm,
                                                     double extraction_rate) override {
        count_call();
        TwoPhaseProblem prob = base_;
        prob.perm = perm;
        const MultiphaseResult result =
            simulate_multiphase(prob, extraction_rate, horizon_, initial_field());
        const double grad = gradient_multiphase(prob, extraction_rate, horizon_, result.trace);
        return {result.critical_pressure, grad};
    }

    std::string name() const override { return "multi"; }

    double horizon() const { return horizon_; }

private:
    SaturationField initial_field() const {
        SaturationField s;
        s.values.assign(static_cast<std::size_t>(base_.grid.cells()), initial_saturation_);
        return s;
    }

    TwoPhaseProblem base_;
    double horizon_;
    double initial_saturation_;
};

/// Draws permeability realizations from a fixed KL basis.
struct FieldSampler {
    const KLBasis* basis = nullptr;
    GeostatConfig config;

    PermeabilityField sample(std::uint64_t seed) const { return sample_field(*basis, config, seed); }
};

struct TrainingConfig {
    double lr = 1e-4;
    int batches_per_epoch = 20;  ///< N_b
    int samples_per_batch = 10;  ///< N_s
    int epochs_pretrain = 100;
    int epochs_finetune = 30;
    int epochs_scratch = 100;
    double target_pressure = 0.0;  ///< [Pa]
    int validation_size = 200;
    std::uint64_t seed = 0;
    int threads = 1;

    int samples_per_epoch() const { return batches_per_epoch * samples_per_batch; }

    void validate() const {
        std::vector<std::string> issues;
        if (!(lr > 0.0)) {
            issues.push_back("learning rate must be > 0");
        }
        if (batches_per_epoch < 1 || samples_per_batch < 1) {
            issues.push_back("batch counts must be >= 1");
        }
        if (epochs_pretrain < 0 || epochs_finetune < 0 || epochs_scratch < 0) {
            issues.push_back("epoch counts must be >= 0");
        }
        if (validation_size < 1) {
            issues.push_back("validation size must be >= 1");
        }
        if (!std::isfinite(target_pressure)) {
            issues.push_back("target pressure must be finite");
        }
        if (!issues.empty()) {
            throw ConfigError(std::move(issues));
        }
    }
};

/// One loss-history row. sim_calls counts forward simulator invocations
/// cumulatively across the whole run; wall_s is seconds since run start.
struct LossRecord {
    int epoch = 0;  ///< global 1-based epoch index across stages
    std::string stage;
    double train_rmse = 0.0;  ///< [Pa]
    double val_rmse = 0.0;    ///< [Pa]
    long sim_calls = 0;
    double wall_s = 0.0;
};

/// The fixed validation ensemble: seeds come from the validation stream of
/// the master seed, disjoint from training and evaluation fields.
inline std::vector<PermeabilityField> make_validation_fields(const FieldSampler& sampler,
                                                             int count, std::uint64_t master_seed) {
    std::vector<PermeabilityField> fields(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        fields[static_cast<std::size_t>(i)] =
            sampler.sample(derive_seed(master_seed, SeedStream::validation, static_cast<std::uint64_t>(i)));
    }
    return fields;
}

struct EpochMetrics {
    double train_rmse = 0.0;
    double val_rmse = 0.0;
};

/// One epoch of physics-in-the-loop training.
///
/// Per batch: draw N_s fresh fields (the global epoch index keeps seeds
/// unique across epochs and stages), push each through the surrogate and the
/// simulator, chain the simulator adjoint into the network backward pass,
/// reduce the per-sample gradients in index order and take one ADAM step.
/// Validation runs after the last batch with the stage's own physics.
inline EpochMetrics train_epoch(RateSurrogate& surrogate, AdamState& opt_state,
                                const TrainingConfig& cfg, int global_epoch,
                                PressureResponse& physics, const FieldSampler& sampler,
                                const std::vector<PermeabilityField>& validation_fields) {
    const int nb = cfg.batches_per_epoch;
    const int ns = cfg.samples_per_batch;
    const int n_params = surrogate.net.param_count();
    const AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};

    std::vector<std::vector<double>> sample_grads(
        static_cast<std::size_t>(ns), std::vector<double>(static_cast<std::size_t>(n_params), 0.0));
    std::vector<double> sample_sq(static_cast<std::size_t>(ns), 0.0);
    std::vector<double> grads(static_cast<std::size_t>(n_params), 0.0);

    double total_sq = 0.0;
    for (int b = 0; b < nb; ++b) {
        parallel_for(ns, cfg.threads, [&](int s) {
            const std::uint64_t seed =
                derive_seed(cfg.seed, SeedStream::training, static_cast<std::uint64_t>(global_epoch),
                            static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(s));
            try {
                const PermeabilityField field = sampler.sample(seed);
                const RateSurrogate::Eval eval = surrogate.evaluate(field);
                const auto [dp, ddp_dq] = physics.evaluate_with_gradient(field, eval.rate);
                if (!std::isfinite(dp) || !std::isfinite(ddp_dq)) {
                    throw Error("simulator returned a non-finite pressure or gradient");
                }
                const double err = dp - cfg.target_pressure;
                sample_sq[static_cast<std::size_t>(s)] = err * err;
                auto& buf = sample_grads[static_cast<std::size_t>(s)];
                std::fill(buf.begin(), buf.end(), 0.0);
                surrogate.accumulate_gradient(eval, 2.0 * err * ddp_dq, buf);
            } catch (const std::exception& e) {
                throw Error("training sample failed (epoch " + std::to_string(global_epoch) +
                            ", batch " + std::to_string(b) + ", sample " + std::to_string(s) +
                            ", field seed " + std::to_string(seed) + "): " + e.what());
            }
        });
        std::fill(grads.begin(), grads.end(), 0.0);
        for (int s = 0; s < ns; ++s) {  // ordered reduction keeps runs bitwise stable
            total_sq += sample_sq[static_cast<std::size_t>(s)];
            const auto& buf = sample_grads[static_cast<std::size_t>(s)];
            for (int p = 0; p < n_params; ++p) {
                grads[static_cast<std::size_t>(p)] += buf[static_cast<std::size_t>(p)];
            }
        }
        adam_step(surrogate.net.parameters(), grads, opt_state, adam_cfg);
    }

    EpochMetrics metrics;
    metrics.train_rmse = rmse_from_loss(total_sq, nb, ns);

    const int nv = static_cast<int>(validation_fields.size());
    std::vector<double> val_sq(static_cast<std::size_t>(nv), 0.0);
    parallel_for(nv, cfg.threads, [&](int i) {
        try {
            const double rate = surrogate.predict_rate(validation_fields[static_cast<std::size_t>(i)]);
            const double dp = physics.evaluate(validation_fields[static_cast<std::size_t>(i)], rate);
            const double err = dp - cfg.target_pressure;
            val_sq[static_cast<std::size_t>(i)] = err * err;
        } catch (const std::exception& e) {
            throw Error("validation sample " + std::to_string(i) + " failed: " + e.what());
        }
    });
    double vsum = 0.0;
    for (double v : val_sq) {
        vsum += v;
    }
    metrics.val_rmse = std::sqrt(vsum / std::max(nv, 1));
    return metrics;
}

using EpochCallback = std::function<void(const LossRecord&)>;

/// Run `epochs` epochs against one physics model, appending to `history`.
/// Optimizer moments start fresh at each stage boundary so stale curvature
/// estimates from the previous physics do not leak in.
inline void run_training_stage(RateSurrogate& surrogate, const TrainingConfig& cfg,
                               const std::string& stage_name, int epochs, int global_epoch_offset,
                               PressureResponse& physics, const FieldSampler& sampler,
                               const std::vector<PermeabilityField>& validation_fields,
                               long prior_sim_calls,
                               std::chrono::steady_clock::time_point run_start,
                               std::vector<LossRecord>& history, const EpochCallback& on_epoch) {
    AdamState opt_state(static_cast<std::size_t>(surrogate.net.param_count()));
    for (int e = 1; e <= epochs; ++e) {
        const int global_epoch = global_epoch_offset + e;
        const EpochMetrics m =
            train_epoch(surrogate, opt_state, cfg, global_epoch, physics, sampler, validation_fields);
        LossRecord rec;
        rec.epoch = global_epoch;
        rec.stage = stage_name;
        rec.train_rmse = m.train_rmse;
        rec.val_rmse = m.val_rmse;
        rec.sim_calls = prior_sim_calls + physics.simulator_calls();
        rec.wall_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
        history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
    }
}

/// Two-stage transfer workflow: pretrain against `pretrain_physics`, carry
/// the parameters unchanged into the fine-tuning stage against
/// `finetune_physics`.
inline std::vector<LossRecord> run_curriculum(RateSurrogate& surrogate, const TrainingConfig& cfg,
                                              PressureResponse& pretrain_physics,
                                              PressureResponse& finetune_physics,
                                              const FieldSampler& sampler,
                                              const std::vector<PermeabilityField>& validation_fields,
                                              const EpochCallback& on_epoch = {}) {
    cfg.validate();
    std::vector<LossRecord> history;
    const auto run_start = std::chrono::steady_clock::now();
    run_training_stage(surrogate, cfg, "pretrain", cfg.epochs_pretrain, 0, pretrain_physics,
                       sampler, validation_fields, 0, run_start, history, on_epoch);
    run_training_stage(surrogate, cfg, "finetune", cfg.epochs_finetune, cfg.epochs_pretrain,
                       finetune_physics, sampler, validation_fields,
                       pretrain_physics.simulator_calls(), run_start, history, on_epoch);
    return history;
}

/// Baseline workflow: train from random initialization against the transient
/// physics only.
inline std::vector<LossRecord> run_scratch(RateSurrogate& surrogate, const TrainingConfig& cfg,
                                           PressureResponse& physics, const FieldSampler& sampler,
                                           const std::vector<PermeabilityField>& validation_fields,
                                           const EpochCallback& on_epoch = {}) {
    cfg.validate();
    std::vector<LossRecord> history;
    const auto run_start = std::chrono::steady_clock::now();
    run_training_stage(surrogate, cfg, "scratch", cfg.epochs_scratch, 0, physics, sampler,
                       validation_fields, 0, run_start, history, on_epoch);
    return history;
}

/// Deterministic loss-history CSV (no wall clock; see write_timing_csv).
inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("write_loss_csv: cannot open '" + path + "'");
    }
    out << "epoch,stage,train_rmse_pa,val_rmse_pa,sim_calls\n";
    for (const auto& r : history) {
        out << r.epoch << "," << r.stage << "," << format_double(r.train_rmse) << ","
            << format_double(r.val_rmse) << "," << r.sim_calls << "\n";
    }
}

/// Wall-clock sidecar for the loss history; split from the loss CSV so that
/// identical runs produce identical loss files.
inline void write_timing_csv(const std::string& path, const std::vector<LossRecord>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("write_timing_csv: cannot open '" + path + "'");
    }
    out << "epoch,stage,wall_s\n";
    for (const auto& r : history) {
        out << r.epoch << "," << r.stage << "," << format_double(r.wall_s) << "\n";
    }
}

}  // namespace subflow
