#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "subflow/cnn.hpp"
#include "subflow/errors.hpp"
#include "subflow/grid.hpp"
#include "subflow/io.hpp"

namespace subflow {

/// CNN plus the fixed input/output transforms that make it a physical map:
/// permeability image -> extraction rate.
///
/// Inputs are standardized log10-permeabilities ((log10 K - norm_mean) /
/// norm_std); raw permeabilities near 1e-12 m^2 would under-range the
/// network. The raw scalar output passes through softplus and is scaled by
/// rate_scale (the injection rate), so predicted extraction rates are
/// non-negative and naturally bounded near the injection magnitude.
struct RateSurrogate {
    Network net;
    double norm_mean = 0.0;   ///< log10(m^2)
    double norm_std = 1.0;    ///< log10(m^2); 1 for zero-variance setups
    double rate_scale = 1.0;  ///< [m^3/s]

    RateSurrogate(Network network, double mean, double std_dev, double scale)
        : net(std::move(network)), norm_mean(mean), norm_std(std_dev), rate_scale(scale) {
        if (!(norm_std > 0.0)) {
            throw std::invalid_argument("RateSurrogate: norm_std must be positive");
        }
        if (!(rate_scale > 0.0)) {
            throw std::invalid_argument("RateSurrogate: rate_scale must be positive");
        }
    }

    Tensor3 normalized_input(const PermeabilityField& perm) const {
        const auto shape = net.input_shape();
        Tensor3 x(shape[0], shape[1], shape[2]);
        if (static_cast<int>(perm.values.size()) != x.size()) {
            throw std::invalid_argument("RateSurrogate: field has " +
                                        std::to_string(perm.values.size()) + " cells, network expects " +
                                        std::to_string(x.size()));
        }
        for (std::size_t c = 0; c < perm.values.size(); ++c) {
            x.v[c] = (std::log10(perm.values[c]) - norm_mean) / norm_std;
        }
        return x;
    }

    double rate_from_raw(double raw) const { return softplus(raw) * rate_scale; }
    double d_rate_from_raw(double raw) const { return d_softplus(raw) * rate_scale; }

    double predict_rate(const PermeabilityField& perm) const {
        return rate_from_raw(net.forward_scalar(normalized_input(perm)));
    }

    struct Eval {
        double raw = 0.0;
        double rate = 0.0;
        std::vector<Tensor3> acts;
    };

    Eval evaluate(const PermeabilityField& perm) const {
        Eval e;
        e.raw = net.forward_scalar(normalized_input(perm), &e.acts);
        e.rate = rate_from_raw(e.raw);
        return e;
    }

    /// Accumulate dJ/d(params) into grads given dJ/d(rate).
    void accumulate_gradient(const Eval& eval, double d_rate, std::vector<double>& grads) const {
        net.backward_scalar(eval.acts, d_rate * d_rate_from_raw(eval.raw), grads);
    }
};

inline RateSurrogate make_rate_surrogate(double norm_mean, double norm_std, double rate_scale,
                                         std::uint64_t init_seed) {
    Network net = make_rate_network();
    net.initialize(init_seed);
    return RateSurrogate(std::move(net), norm_mean, norm_std, rate_scale);
}

/// Checkpoint format: versioned text header (architecture, normalization and
/// output-scaling constants, parameter count) followed by the parameters as
/// little-endian 64-bit floats in declaration order. Byte-stable for a given
/// surrogate, so identical runs write identical files.
inline void save_checkpoint(const std::string& path, const RateSurrogate& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CheckpointError("save_checkpoint: cannot open '" + path + "' for writing");
    }
    out << "SUBFLOW-CKPT v1\n";
    out << "arch " << s.net.architecture() << "\n";
    out << "norm_mean " << format_double(s.norm_mean) << "\n";
    out << "norm_std " << format_double(s.norm_std) << "\n";
    out << "rate_scale " << format_double(s.rate_scale) << "\n";
    out << "params " << s.net.param_count() << "\n";
    out << "BINARY\n";
    for (double v : s.net.parameters()) {
        detail::write_f64_le(out, v);
    }
    if (!out) {
        throw CheckpointError("save_checkpoint: write failed for '" + path + "'");
    }
}

inline RateSurrogate load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("load_checkpoint: cannot open '" + path + "'");
    }
    if (detail::read_header_line(in, "load_checkpoint") != "SUBFLOW-CKPT v1") {
        throw CheckpointError("load_checkpoint: '" + path + "' is not a SUBFLOW-CKPT v1 file");
    }
    std::string arch;
    std::string mean_s, std_s, scale_s;
    long declared_params = -1;
    for (;;) {
        const std::string line = detail::read_header_line(in, "load_checkpoint");
        if (line == "BINARY") {
            break;
        }
        const auto space = line.find(' ');
        const std::string key = line.substr(0, space);
        const std::string value = space == std::string::npos ? "" : line.substr(space + 1);
        if (key == "arch") {
            arch = value;
        } else if (key == "norm_mean") {
            mean_s = value;
        } else if (key == "norm_std") {
            std_s = value;
        } else if (key == "rate_scale") {
            scale_s = value;
        } else if (key == "params") {
            declared_params = std::stol(value);
        } else {
            throw CheckpointError("load_checkpoint: unknown header key '" + key + "'");
        }
    }
    if (arch.empty() || mean_s.empty() || std_s.empty() || scale_s.empty() || declared_params < 0) {
        throw CheckpointError("load_checkpoint: incomplete header in '" + path + "'");
    }

    Network net = make_rate_network();
    if (net.architecture() != arch) {
        throw CheckpointError("load_checkpoint: architecture mismatch\n  file:     " + arch +
                              "\n  expected: " + net.architecture());
    }
    if (declared_params != net.param_count()) {
        throw CheckpointError("load_checkpoint: parameter count mismatch (file " +
                              std::to_string(declared_params) + ", network " +
                              std::to_string(net.param_count()) + ")");
    }
    for (double& v : net.parameters()) {
        v = detail::read_f64_le(in);
    }
    return RateSurrogate(std::move(net), parse_double(mean_s, "load_checkpoint norm_mean"),
                         parse_double(std_s, "load_checkpoint norm_std"),
                         parse_double(scale_s, "load_checkpoint rate_scale"));
}

/// Reject checkpoints whose transforms do not match the active setup; a rate
/// net trained against one normalization is meaningless under another.
inline void check_checkpoint_compatibility(const RateSurrogate& s, double norm_mean,
                                           double norm_std, double rate_scale) {
    std::vector<std::string> issues;
    if (s.norm_mean != norm_mean) {
        issues.push_back("norm_mean: checkpoint " + format_double(s.norm_mean) + " vs config " +
                         format_double(norm_mean));
    }
    if (s.norm_std != norm_std) {
        issues.push_back("norm_std: checkpoint " + format_double(s.norm_std) + " vs config " +
                         format_double(norm_std));
    }
    if (s.rate_scale != rate_scale) {
        issues.push_back("rate_scale: checkpoint " + format_double(s.rate_scale) + " vs config " +
                         format_double(rate_scale));
    }
    if (!issues.empty()) {
        std::string msg = "checkpoint incompatible with configuration:";
        for (const auto& i : issues) {
            msg += "\n  - " + i;
        }
        throw CheckpointError(msg);
    }
}

}  // namespace subflow
