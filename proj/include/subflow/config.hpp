#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "subflow/errors.hpp"
#include "subflow/geostats.hpp"
#include "subflow/grid.hpp"
#include "subflow/io.hpp"
#include "subflow/rng.hpp"
#include "subflow/single_phase.hpp"
#include "subflow/training.hpp"
#include "subflow/two_phase.hpp"

namespace subflow {

/// Where a default comes from: a published parameter table, a value derived
/// from published material, or a project decision where the source is silent.
enum class Provenance { paper, derived, decision };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::paper: return "paper";
        case Provenance::derived: return "derived";
        case Provenance::decision: return "decision";
    }
    return "?";
}

/// Every tunable of the toolkit with its documented default. Parsed from a
/// flat `key = value` file; unknown keys are rejected.
struct RunConfig {
    // grid
    int grid_nx = 24;
    int grid_ny = 24;
    double grid_lx = 1000.0;
    double grid_ly = 1000.0;
    // geostatistics
    std::string geostat_covariance = "exponential";
    double geostat_correlation_length = 5000.0 / 24.0;  // five cells
    double geostat_variance = 0.25;
    double geostat_mean_log_perm = -8.5;
    int geostat_n_modes = 200;
    double geostat_matern_smoothness = 1.5;
    // wells (cell indices on the grid)
    int wells_injection_i = 6;
    int wells_injection_j = 12;
    int wells_extraction_i = 15;
    int wells_extraction_j = 12;
    int wells_critical_i = 18;
    int wells_critical_j = 12;
    double wells_injection_rate = 0.031688;
    // fluids
    double fluid_viscosity_w = 1.0;
    double fluid_viscosity_nw = 1.0;
    double fluid_connate_saturation = 0.0;
    double fluid_irreducible_saturation = 0.0;
    double fluid_porosity = 1.0;
    double fluid_density_w = 1.0;
    // physics
    double physics_bc_pressure = 0.0;
    double physics_horizon_s = 3.15576e7;  // one year
    double physics_cfl_factor = 0.9;
    int physics_max_steps = 100000;
    double physics_initial_saturation = 0.0;
    // training
    double train_learning_rate = 1e-4;
    int train_batches_per_epoch = 20;
    int train_samples_per_batch = 10;
    int train_samples_per_epoch = 200;
    int train_epochs_pretrain = 100;
    int train_epochs_finetune = 30;
    int train_epochs_scratch = 100;
    double train_target_pressure = 0.0;
    int train_validation_size = 200;
    std::uint64_t train_seed = 0;
    // evaluation
    int eval_samples = 10000;
    double eval_pressure_threshold = 1e4;  // 0.01 MPa
    // execution
    int run_threads = 0;  // 0 = all cores
};

namespace detail {

struct KeyInfo {
    std::string key;
    Provenance prov;
    std::string desc;
    std::function<std::string(const RunConfig&)> get;
    std::function<bool(RunConfig&, const std::string&)> set;  // false on parse failure
};

inline bool parse_int_value(const std::string& s, long long& out) {
    try {
        std::size_t pos = 0;
        out = std::stoll(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

inline bool parse_uint_value(const std::string& s, std::uint64_t& out) {
    if (s.empty() || s[0] == '-') {
        return false;
    }
    try {
        std::size_t pos = 0;
        out = std::stoull(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

inline bool parse_real_value(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

inline KeyInfo int_key(std::string key, int RunConfig::* member, Provenance prov, std::string desc) {
    KeyInfo info;
    info.key = std::move(key);
    info.prov = prov;
    info.desc = std::move(desc);
    info.get = [member](const RunConfig& c) { return std::to_string(c.*member); };
    info.set = [member](RunConfig& c, const std::string& v) {
        long long parsed = 0;
        if (!parse_int_value(v, parsed)) {
            return false;
        }
        c.*member = static_cast<int>(parsed);
        return true;
    };
    return info;
}

inline KeyInfo real_key(std::string key, double RunConfig::* member, Provenance prov,
                        std::string desc) {
    KeyInfo info;
    info.key = std::move(key);
    info.prov = prov;
    info.desc = std::move(desc);
    info.get = [member](const RunConfig& c) { return format_double(c.*member); };
    info.set = [member](RunConfig& c, const std::string& v) {
        double parsed = 0;
        if (!parse_real_value(v, parsed)) {
            return false;
        }
        c.*member = parsed;
        return true;
    };
    return info;
}

inline KeyInfo uint_key(std::string key, std::uint64_t RunConfig::* member, Provenance prov,
                        std::string desc) {
    KeyInfo info;
    info.key = std::move(key);
    info.prov = prov;
    info.desc = std::move(desc);
    info.get = [member](const RunConfig& c) { return std::to_string(c.*member); };
    info.set = [member](RunConfig& c, const std::string& v) {
        std::uint64_t parsed = 0;
        if (!parse_uint_value(v, parsed)) {
            return false;
        }
        c.*member = parsed;
        return true;
    };
    return info;
}

inline KeyInfo string_key(std::string key, std::string RunConfig::* member, Provenance prov,
                          std::string desc) {
    KeyInfo info;
    info.key = std::move(key);
    info.prov = prov;
    info.desc = std::move(desc);
    info.get = [member](const RunConfig& c) { return c.*member; };
    info.set = [member](RunConfig& c, const std::string& v) {
        c.*member = v;
        return true;
    };
    return info;
}

}  // namespace detail

inline const std::vector<detail::KeyInfo>& config_registry() {
    using detail::int_key;
    using detail::real_key;
    using detail::string_key;
    using detail::uint_key;
    static const std::vector<detail::KeyInfo> registry = {
        int_key("grid.nx", &RunConfig::grid_nx, Provenance::derived,
                "cells in x; the bundled CNN flattens to 144 features, which requires 24"),
        int_key("grid.ny", &RunConfig::grid_ny, Provenance::derived, "cells in y"),
        real_key("grid.lx", &RunConfig::grid_lx, Provenance::paper, "domain extent in x [m]"),
        real_key("grid.ly", &RunConfig::grid_ly, Provenance::paper, "domain extent in y [m]"),
        string_key("geostat.covariance", &RunConfig::geostat_covariance, Provenance::decision,
                   "covariance family: exponential | matern"),
        real_key("geostat.correlation_length", &RunConfig::geostat_correlation_length,
                 Provenance::decision,
                 "correlation length [m]; default spans five cells of the default grid"),
        real_key("geostat.variance", &RunConfig::geostat_variance, Provenance::decision,
                 "log10-permeability variance; source material does not report one"),
        real_key("geostat.mean_log_perm", &RunConfig::geostat_mean_log_perm, Provenance::decision,
                 "mean log10 permeability [log10 m^2]; source material does not report one"),
        int_key("geostat.n_modes", &RunConfig::geostat_n_modes, Provenance::paper,
                "number of Karhunen-Loeve modes kept"),
        real_key("geostat.matern_smoothness", &RunConfig::geostat_matern_smoothness,
                 Provenance::decision, "Matern smoothness nu (matern covariance only)"),
        int_key("wells.injection_i", &RunConfig::wells_injection_i, Provenance::decision,
                "injector cell i (layout follows the published sketch: extractor between "
                "injector and critical location, closer to the latter)"),
        int_key("wells.injection_j", &RunConfig::wells_injection_j, Provenance::decision,
                "injector cell j"),
        int_key("wells.extraction_i", &RunConfig::wells_extraction_i, Provenance::decision,
                "extractor cell i"),
        int_key("wells.extraction_j", &RunConfig::wells_extraction_j, Provenance::decision,
                "extractor cell j"),
        int_key("wells.critical_i", &RunConfig::wells_critical_i, Provenance::decision,
                "critical monitoring cell i"),
        int_key("wells.critical_j", &RunConfig::wells_critical_j, Provenance::decision,
                "critical monitoring cell j"),
        real_key("wells.injection_rate", &RunConfig::wells_injection_rate, Provenance::paper,
                 "constant injection rate [m^3/s] (approx. 1 Mt/year of water)"),
        real_key("fluid.viscosity_w", &RunConfig::fluid_viscosity_w, Provenance::paper,
                 "wetting-phase viscosity [Pa s]"),
        real_key("fluid.viscosity_nw", &RunConfig::fluid_viscosity_nw, Provenance::paper,
                 "non-wetting-phase viscosity [Pa s]"),
        real_key("fluid.connate_saturation", &RunConfig::fluid_connate_saturation,
                 Provenance::paper, "connate wetting saturation s_wc"),
        real_key("fluid.irreducible_saturation", &RunConfig::fluid_irreducible_saturation,
                 Provenance::paper, "irreducible non-wetting saturation s_nwr"),
        real_key("fluid.porosity", &RunConfig::fluid_porosity, Provenance::paper, "porosity phi"),
        real_key("fluid.density_w", &RunConfig::fluid_density_w, Provenance::decision,
                 "wetting density [kg/m^3]; volumetric well rates absorb it, keep 1"),
        real_key("physics.bc_pressure", &RunConfig::physics_bc_pressure, Provenance::paper,
                 "Dirichlet pressure on all outer boundaries [Pa]"),
        real_key("physics.horizon_s", &RunConfig::physics_horizon_s, Provenance::paper,
                 "simulated horizon for the transient solver [s]; default is one year"),
        real_key("physics.cfl_factor", &RunConfig::physics_cfl_factor, Provenance::decision,
                 "safety factor applied to the CFL timestep bound, in (0,1]"),
        int_key("physics.max_steps", &RunConfig::physics_max_steps, Provenance::decision,
                "step cap guarding against runaway tiny timesteps"),
        real_key("physics.initial_saturation", &RunConfig::physics_initial_saturation,
                 Provenance::decision,
                 "uniform initial wetting saturation; 0 = reservoir filled with the non-wetting phase"),
        real_key("train.learning_rate", &RunConfig::train_learning_rate, Provenance::paper,
                 "ADAM learning rate"),
        int_key("train.batches_per_epoch", &RunConfig::train_batches_per_epoch, Provenance::derived,
                "N_b; published \"batch size 20\" read as 20 batches per epoch, the only "
                "reading consistent with 200 samples per epoch"),
        int_key("train.samples_per_batch", &RunConfig::train_samples_per_batch, Provenance::paper,
                "N_s"),
        int_key("train.samples_per_epoch", &RunConfig::train_samples_per_epoch, Provenance::paper,
                "must equal batches_per_epoch * samples_per_batch"),
        int_key("train.epochs_pretrain", &RunConfig::train_epochs_pretrain, Provenance::decision,
                "single-phase pretraining epochs"),
        int_key("train.epochs_finetune", &RunConfig::train_epochs_finetune, Provenance::decision,
                "multiphase fine-tuning epochs"),
        int_key("train.epochs_scratch", &RunConfig::train_epochs_scratch, Provenance::decision,
                "epochs for the multiphase-only baseline workflow"),
        real_key("train.target_pressure", &RunConfig::train_target_pressure, Provenance::derived,
                 "prescribed pressure at the critical cell [Pa]"),
        int_key("train.validation_size", &RunConfig::train_validation_size, Provenance::paper,
                "fixed validation ensemble size"),
        uint_key("train.seed", &RunConfig::train_seed, Provenance::decision,
                 "master seed; training/validation/evaluation fields derive from disjoint streams"),
        int_key("eval.samples", &RunConfig::eval_samples, Provenance::paper,
                "ensemble size for the evaluation subcommand"),
        real_key("eval.pressure_threshold", &RunConfig::eval_pressure_threshold,
                 Provenance::decision, "|pressure - target| counted as success [Pa]"),
        int_key("run.threads", &RunConfig::run_threads, Provenance::decision,
                "worker threads; 0 = all available cores"),
    };
    return registry;
}

/// Collect every invariant violation in one pass.
inline std::vector<std::string> validate_config(const RunConfig& c) {
    std::vector<std::string> issues;
    auto require = [&issues](bool ok, const std::string& msg) {
        if (!ok) {
            issues.push_back(msg);
        }
    };
    require(c.grid_nx >= 3 && c.grid_ny >= 3, "grid.nx and grid.ny must be >= 3");
    require(c.grid_lx > 0.0 && c.grid_ly > 0.0, "grid.lx and grid.ly must be > 0");
    require(c.geostat_covariance == "exponential" || c.geostat_covariance == "matern",
            "geostat.covariance must be 'exponential' or 'matern'");
    require(c.geostat_correlation_length > 0.0, "geostat.correlation_length must be > 0");
    require(c.geostat_variance >= 0.0, "geostat.variance must be >= 0");
    require(std::isfinite(c.geostat_mean_log_perm), "geostat.mean_log_perm must be finite");
    require(c.geostat_n_modes >= 1 && c.geostat_n_modes <= c.grid_nx * c.grid_ny,
            "geostat.n_modes must lie in [1, grid.nx*grid.ny]");
    require(c.geostat_matern_smoothness > 0.0, "geostat.matern_smoothness must be > 0");
    auto well_in_range = [&](int i, int j, const char* name) {
        require(i >= 0 && i < c.grid_nx && j >= 0 && j < c.grid_ny,
                std::string("wells.") + name + " cell outside the grid");
    };
    well_in_range(c.wells_injection_i, c.wells_injection_j, "injection");
    well_in_range(c.wells_extraction_i, c.wells_extraction_j, "extraction");
    well_in_range(c.wells_critical_i, c.wells_critical_j, "critical");
    const auto cell = [&c](int i, int j) { return j * c.grid_nx + i; };
    const int inj = cell(c.wells_injection_i, c.wells_injection_j);
    const int ext = cell(c.wells_extraction_i, c.wells_extraction_j);
    const int crit = cell(c.wells_critical_i, c.wells_critical_j);
    require(inj != ext && inj != crit && ext != crit,
            "wells: injection, extraction and critical cells must be distinct");
    require(c.wells_injection_rate > 0.0 && std::isfinite(c.wells_injection_rate),
            "wells.injection_rate must be positive and finite");
    require(c.fluid_viscosity_w > 0.0 && c.fluid_viscosity_nw > 0.0,
            "fluid viscosities must be > 0");
    require(c.fluid_connate_saturation >= 0.0 && c.fluid_irreducible_saturation >= 0.0 &&
                c.fluid_connate_saturation + c.fluid_irreducible_saturation < 1.0,
            "fluid saturation endpoints must satisfy s_wc, s_nwr >= 0 and s_wc + s_nwr < 1");
    require(c.fluid_porosity > 0.0 && c.fluid_porosity <= 1.0, "fluid.porosity must lie in (0, 1]");
    require(c.fluid_density_w > 0.0, "fluid.density_w must be > 0");
    require(std::isfinite(c.physics_bc_pressure), "physics.bc_pressure must be finite");
    require(c.physics_horizon_s > 0.0, "physics.horizon_s must be > 0");
    require(c.physics_cfl_factor > 0.0 && c.physics_cfl_factor <= 1.0,
            "physics.cfl_factor must lie in (0, 1]");
    require(c.physics_max_steps >= 1, "physics.max_steps must be >= 1");
    require(c.physics_initial_saturation >= 0.0 && c.physics_initial_saturation <= 1.0,
            "physics.initial_saturation must lie in [0, 1]");
    require(c.train_learning_rate > 0.0, "train.learning_rate must be > 0");
    require(c.train_batches_per_epoch >= 1 && c.train_samples_per_batch >= 1,
            "train batch counts must be >= 1");
    require(c.train_samples_per_epoch == c.train_batches_per_epoch * c.train_samples_per_batch,
            "train.samples_per_epoch must equal batches_per_epoch * samples_per_batch");
    require(c.train_epochs_pretrain >= 0 && c.train_epochs_finetune >= 0 &&
                c.train_epochs_scratch >= 0,
            "train epoch counts must be >= 0");
    require(std::isfinite(c.train_target_pressure), "train.target_pressure must be finite");
    require(c.train_validation_size >= 1, "train.validation_size must be >= 1");
    require(c.eval_samples >= 1, "eval.samples must be >= 1");
    require(c.eval_pressure_threshold > 0.0, "eval.pressure_threshold must be > 0");
    require(c.run_threads >= 0, "run.threads must be >= 0");
    return issues;
}

/// Parse `key = value` text. '#' starts a comment; blank lines are skipped;
/// unknown or duplicate keys and any invariant violations are reported
/// together.
inline RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::vector<std::string> issues;
    std::map<std::string, const detail::KeyInfo*> lookup;
    for (const auto& info : config_registry()) {
        lookup[info.key] = &info;
    }
    std::map<std::string, int> seen;

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) {
            return std::string();
        }
        const auto end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(line_no);
        if (eq == std::string::npos) {
            issues.push_back(where + ": expected 'key = value', got '" + line + "'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = lookup.find(key);
        if (it == lookup.end()) {
            issues.push_back(where + ": unknown key '" + key + "'");
            continue;
        }
        if (seen.count(key)) {
            issues.push_back(where + ": duplicate key '" + key + "' (first at line " +
                             std::to_string(seen[key]) + ")");
            continue;
        }
        seen[key] = line_no;
        if (value.empty()) {
            issues.push_back(where + ": empty value for '" + key + "'");
            continue;
        }
        if (!it->second->set(cfg, value)) {
            issues.push_back(where + ": cannot parse value '" + value + "' for '" + key + "'");
        }
    }
    if (issues.empty()) {
        issues = validate_config(cfg);
    }
    if (!issues.empty()) {
        throw ConfigError(std::move(issues));
    }
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError({"cannot open config file '" + path + "'"});
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str(), path);
}

/// Canonical serialization: every key with its provenance tag and one-line
/// description. parse(serialize(c)) == c.
inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    for (const auto& info : config_registry()) {
        out << "# [" << to_string(info.prov) << "] " << info.desc << "\n";
        out << info.key << " = " << info.get(cfg) << "\n";
    }
    return out.str();
}

inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(serialize_config(cfg)); }

// --- builders -------------------------------------------------------------

inline Grid grid_from_config(const RunConfig& c) {
    return build_grid(c.grid_nx, c.grid_ny, c.grid_lx, c.grid_ly);
}

inline GeostatConfig geostat_from_config(const RunConfig& c) {
    GeostatConfig g;
    g.covariance_kind = c.geostat_covariance == "matern" ? CovarianceKind::matern
                                                         : CovarianceKind::exponential;
    g.correlation_length = c.geostat_correlation_length;
    g.variance = c.geostat_variance;
    g.mean_log_perm = c.geostat_mean_log_perm;
    g.n_modes = c.geostat_n_modes;
    g.matern_smoothness = c.geostat_matern_smoothness;
    return g;
}

inline WellSet wells_from_config(const RunConfig& c, const Grid& grid) {
    return make_wells(grid, c.wells_injection_i, c.wells_injection_j, c.wells_extraction_i,
                      c.wells_extraction_j, c.wells_critical_i, c.wells_critical_j,
                      c.wells_injection_rate);
}

inline FluidProps fluid_from_config(const RunConfig& c) {
    FluidProps f;
    f.mu_w = c.fluid_viscosity_w;
    f.mu_nw = c.fluid_viscosity_nw;
    f.s_wc = c.fluid_connate_saturation;
    f.s_nwr = c.fluid_irreducible_saturation;
    f.porosity = c.fluid_porosity;
    f.rho_w = c.fluid_density_w;
    return f;
}

inline TrainingConfig training_from_config(const RunConfig& c, int threads) {
    TrainingConfig t;
    t.lr = c.train_learning_rate;
    t.batches_per_epoch = c.train_batches_per_epoch;
    t.samples_per_batch = c.train_samples_per_batch;
    t.epochs_pretrain = c.train_epochs_pretrain;
    t.epochs_finetune = c.train_epochs_finetune;
    t.epochs_scratch = c.train_epochs_scratch;
    t.target_pressure = c.train_target_pressure;
    t.validation_size = c.train_validation_size;
    t.seed = c.train_seed;
    t.threads = threads;
    return t;
}

/// Input standardization for the surrogate: log10 K shifted by the geostat
/// mean and scaled by the field standard deviation (1 when variance is 0).
inline std::pair<double, double> normalization_from_config(const RunConfig& c) {
    const double std_dev = c.geostat_variance > 0.0 ? std::sqrt(c.geostat_variance) : 1.0;
    return {c.geostat_mean_log_perm, std_dev};
}

}  // namespace subflow
