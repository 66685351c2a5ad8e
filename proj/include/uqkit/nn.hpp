#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "uqkit/autodiff.hpp"
#include "uqkit/error.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/tensor.hpp"

namespace uqkit {

enum class Activation { kRelu, kTanh };

inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "'");
}

struct MLPConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_sizes;
  std::size_t output_dim = 1;
  Activation activation = Activation::kRelu;
  std::vector<double> dropout_rates;  // one per hidden layer, or empty for none
  std::uint64_t init_seed = 0;

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw ConfigError("MLP input and output dims must be positive");
    for (std::size_t h : hidden_sizes) {
      if (h == 0) throw ConfigError("MLP hidden sizes must be positive");
    }
    if (!dropout_rates.empty() && dropout_rates.size() != hidden_sizes.size()) {
      throw ConfigError("MLP needs one dropout rate per hidden layer (" + std::to_string(hidden_sizes.size()) +
                        "), got " + std::to_string(dropout_rates.size()));
    }
    for (double r : dropout_rates) {
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    }
  }

  std::size_t layer_count() const { return hidden_sizes.size() + 1; }
  std::size_t feature_dim() const { return hidden_sizes.empty() ? input_dim : hidden_sizes.back(); }
  std::size_t fan_in(std::size_t layer) const { return layer == 0 ? input_dim : hidden_sizes[layer - 1]; }
  std::size_t fan_out(std::size_t layer) const {
    return layer < hidden_sizes.size() ? hidden_sizes[layer] : output_dim;
  }
};

// Weight init std: He (sqrt(2 / fan_in)) for relu, LeCun (sqrt(1 / fan_in))
// for tanh. Biases start at zero.
inline double init_stddev(Activation a, std::size_t fan_in) {
  return std::sqrt((a == Activation::kRelu ? 2.0 : 1.0) / static_cast<double>(fan_in));
}

struct DenseLayer {
  Tensor weight;  // [fan_in x fan_out]
  Tensor bias;    // [1 x fan_out]
  bool frozen = false;
};

class DropoutMode {
 public:
  static DropoutMode off() { return DropoutMode(false, 0); }
  static DropoutMode sampled(std::uint64_t seed) { return DropoutMode(true, seed); }
  bool is_sampled() const { return sampled_; }
  std::uint64_t seed() const { return seed_; }

 private:
  DropoutMode(bool s, std::uint64_t seed) : sampled_(s), seed_(seed) {}
  bool sampled_;
  std::uint64_t seed_;
};

struct ForwardVars {
  Var output;
  Var features;
};

struct ForwardResult {
  Tensor output;
  Tensor features;
};

/// Records a forward pass of the architecture in `config` on `tape`.
///
/// `params` holds weight/bias handles in layer order [w0, b0, w1, b1, ...].
/// Hidden layers apply activation then inverted dropout; the output layer is
/// linear. Bias is added as ones[n x 1] * b[1 x k] so that only same-shape
/// addition is needed.
inline ForwardVars forward(Tape& tape, const MLPConfig& config, std::span<const Var> params, Var x,
                           DropoutMode dropout) {
  if (params.size() != 2 * config.layer_count()) throw DimensionError("parameter count does not match architecture");
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != config.input_dim) {
    throw DimensionError("forward input " + shape_string(xv.shape()) + " does not match input dim " +
                         std::to_string(config.input_dim));
  }
  const std::size_t n = xv.rows();
  Var ones = tape.constant(Tensor::filled({n, 1}, 1.0));
  Var h = x;
  for (std::size_t l = 0; l < config.hidden_sizes.size(); ++l) {
    h = matmul(h, params[2 * l]) + matmul(ones, params[2 * l + 1]);
    h = config.activation == Activation::kRelu ? relu(h) : tanh(h);
    const double rate = config.dropout_rates.empty() ? 0.0 : config.dropout_rates[l];
    if (dropout.is_sampled() && rate > 0.0) {
      Rng rng(derive_seed(dropout.seed(), l));
      Tensor mask = Tensor::zeros(h.value().shape());
      const double keep_scale = 1.0 / (1.0 - rate);
      for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
      h = h * tape.constant(std::move(mask));
    }
  }
  const std::size_t last = config.hidden_sizes.size();
  Var out = matmul(h, params[2 * last]) + matmul(ones, params[2 * last + 1]);
  return {out, h};
}

/// Layered feed-forward network. Layers 0..H-1 are hidden, layer H is the
/// output layer. Immutable after training; forward() is reentrant.
class MLPModel {
 public:
  MLPModel() = default;

  static MLPModel build(const MLPConfig& config) {
    config.validate();
    MLPModel m;
    m.config_ = config;
    Rng rng(derive_seed(config.init_seed, "mlp-init"));
    for (std::size_t l = 0; l < config.layer_count(); ++l) {
      const std::size_t in = config.fan_in(l), out = config.fan_out(l);
      const double sd = init_stddev(config.activation, in);
      Tensor w = Tensor::zeros({in, out});
      for (double& v : w.data()) v = rng.normal(0.0, sd);
      m.layers_.push_back(DenseLayer{std::move(w), Tensor::zeros({1, out}), false});
    }
    return m;
  }

  const MLPConfig& config() const { return config_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t feature_dim() const { return config_.feature_dim(); }

  void freeze(std::size_t layer, bool frozen = true) { layers_.at(layer).frozen = frozen; }
  void freeze_all(bool frozen = true) {
    for (auto& l : layers_) l.frozen = frozen;
  }
  bool is_frozen(std::size_t layer) const { return layers_.at(layer).frozen; }

  // Flattened [w0, b0, w1, b1, ...].
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> p;
    p.reserve(2 * layers_.size());
    for (const auto& l : layers_) {
      p.push_back(l.weight);
      p.push_back(l.bias);
    }
    return p;
  }

  // Per-tensor trainability matching parameters().
  std::vector<bool> trainable_mask() const {
    std::vector<bool> mask;
    for (const auto& l : layers_) {
      mask.push_back(!l.frozen);
      mask.push_back(!l.frozen);
    }
    return mask;
  }

  void set_parameters(std::span<const Tensor> params) {
    if (params.size() != 2 * layers_.size()) throw DimensionError("parameter count does not match model");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (params[2 * l].shape() != layers_[l].weight.shape() || params[2 * l + 1].shape() != layers_[l].bias.shape()) {
        throw DimensionError("parameter shape does not match layer " + std::to_string(l));
      }
      layers_[l].weight = params[2 * l];
      layers_[l].bias = params[2 * l + 1];
    }
  }

  ForwardResult forward(const Tensor& x, DropoutMode dropout = DropoutMode::off()) const {
    Tape tape;
    std::vector<Var> params;
    for (const auto& l : layers_) {
      params.push_back(tape.constant(l.weight));
      params.push_back(tape.constant(l.bias));
    }
    ForwardVars fv = uqkit::forward(tape, config_, params, tape.constant(x), dropout);
    return {fv.output.value(), fv.features.value()};
  }

  Tensor predict(const Tensor& x, DropoutMode dropout = DropoutMode::off()) const {
    return forward(x, dropout).output;
  }

  friend class CheckpointCodec;

 private:
  MLPConfig config_;
  std::vector<DenseLayer> layers_;
};

/// Checkpoint document (JSON, version 1).
///
///   {"format": "uqkit-checkpoint", "version": 1,
///    "config": {"input_dim", "hidden_sizes", "output_dim", "activation",
///               "dropout_rates", "init_seed"},
///    "layers": [{"frozen": bool,
///                "weight": {"shape": [r, c], "values": ["0x1.8p+0", ...]},
///                "bias":   {"shape": [1, c], "values": [...]}}, ...]}
///
/// Floats are C99 hexadecimal literals so a load reproduces every bit.
class CheckpointCodec {
 public:
  static constexpr int kVersion = 1;
  static constexpr const char* kFormat = "uqkit-checkpoint";

  static std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
  }

  static double parse_hex(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ParseError("bad float literal '" + s + "'");
    return v;
  }

  static nlohmann::json encode(const Tensor& t) {
    nlohmann::json values = nlohmann::json::array();
    for (double v : t.values()) values.push_back(hex(v));
    return {{"shape", t.shape()}, {"values", values}};
  }

  static Tensor decode(const nlohmann::json& j) {
    try {
      Shape shape = j.at("shape").get<Shape>();
      std::vector<double> values;
      for (const auto& v : j.at("values")) values.push_back(parse_hex(v.get<std::string>()));
      return Tensor(std::move(shape), std::move(values));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed tensor in checkpoint: ") + e.what());
    } catch (const DimensionError& e) {
      throw ParseError(std::string("inconsistent tensor in checkpoint: ") + e.what());
    }
  }

  static nlohmann::json config_json(const MLPConfig& c) {
    return {{"input_dim", c.input_dim},       {"hidden_sizes", c.hidden_sizes},
            {"output_dim", c.output_dim},     {"activation", to_string(c.activation)},
            {"dropout_rates", c.dropout_rates}, {"init_seed", c.init_seed}};
  }

  static MLPConfig config_from_json(const nlohmann::json& j) {
    MLPConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
    c.output_dim = j.at("output_dim").get<std::size_t>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.dropout_rates = j.at("dropout_rates").get<std::vector<double>>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
  }

  static nlohmann::json save(const MLPModel& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : m.layers_) {
      layers.push_back({{"frozen", l.frozen}, {"weight", encode(l.weight)}, {"bias", encode(l.bias)}});
    }
    return {{"format", kFormat}, {"version", kVersion}, {"config", config_json(m.config_)}, {"layers", layers}};
  }

  static MLPModel load(const nlohmann::json& doc) {
    try {
      if (doc.at("format").get<std::string>() != kFormat) throw ParseError("not a uqkit checkpoint");
      const int version = doc.at("version").get<int>();
      if (version != kVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                         std::to_string(kVersion) + ")");
      }
      MLPModel m;
      m.config_ = config_from_json(doc.at("config"));
      try {
        m.config_.validate();
      } catch (const ConfigError& e) {
        throw ParseError(std::string("invalid checkpoint config: ") + e.what());
      }
      const auto& layers = doc.at("layers");
      if (layers.size() != m.config_.layer_count()) throw ParseError("checkpoint layer count mismatch");
      for (std::size_t l = 0; l < layers.size(); ++l) {
        DenseLayer layer{decode(layers[l].at("weight")), decode(layers[l].at("bias")),
                         layers[l].at("frozen").get<bool>()};
        const Shape ws{m.config_.fan_in(l), m.config_.fan_out(l)};
        const Shape bs{1, m.config_.fan_out(l)};
        if (layer.weight.shape() != ws || layer.bias.shape() != bs) {
          throw ParseError("checkpoint layer " + std::to_string(l) + " has shape " +
                           shape_string(layer.weight.shape()) + ", expected " + shape_string(ws));
        }
        m.layers_.push_back(std::move(layer));
      }
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed checkpoint: ") + e.what());
    }
  }
};

inline nlohmann::json save_checkpoint(const MLPModel& m) { return CheckpointCodec::save(m); }
inline MLPModel load_checkpoint(const nlohmann::json& doc) { return CheckpointCodec::load(doc); }

}  // namespace uqkit
