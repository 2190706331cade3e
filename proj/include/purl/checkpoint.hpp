#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "purl/errors.hpp"
#include "purl/nn.hpp"

namespace purl {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Network network;
  std::uint64_t seed = 0;
  std::string role = "model";  // "model" or "qnet"
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : ckpt.network.layers) {
    std::vector<int> mask;
    mask.reserve(l.mask.size());
    for (double m : l.mask.values()) mask.push_back(m == 0.0 ? 0 : 1);
    layers.push_back({
        {"in", l.in()},
        {"out", l.out()},
        {"activation", to_string(l.activation)},
        {"weights", std::vector<double>(l.weights.values().begin(), l.weights.values().end())},
        {"bias", l.bias},
        {"mask", mask},
    });
  }
  return {{"version", kCheckpointVersion}, {"seed", ckpt.seed}, {"role", ckpt.role},
          {"layers", layers}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw IoError("checkpoint root is not an object");
    if (!j.contains("version") || j.at("version").get<int>() != kCheckpointVersion) {
      throw IoError("unsupported checkpoint version");
    }
    Checkpoint ckpt;
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("role")) ckpt.role = j.at("role").get<std::string>();
    for (const auto& jl : j.at("layers")) {
      const auto in = jl.at("in").get<std::size_t>();
      const auto out = jl.at("out").get<std::size_t>();
      DenseLayer layer;
      layer.activation = activation_from_string(jl.at("activation").get<std::string>());
      layer.weights = Matrix(out, in, jl.at("weights").get<std::vector<double>>());
      layer.bias = jl.at("bias").get<std::vector<double>>();
      std::vector<double> mask;
      for (const auto& m : jl.at("mask")) {
        const int v = m.get<int>();
        if (v != 0 && v != 1) throw IoError("mask entries must be 0 or 1");
        mask.push_back(v);
      }
      layer.mask = Matrix(out, in, std::move(mask));
      ckpt.network.layers.push_back(std::move(layer));
    }
    ckpt.network.validate();
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << checkpoint_to_json(ckpt).dump() << '\n';
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

inline void save_checkpoint(const Network& net, const std::filesystem::path& path,
                            std::uint64_t seed = 0, const std::string& role = "model") {
  save_checkpoint(Checkpoint{net, seed, role}, path);
}

inline Checkpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

inline Network load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint_file(path).network;
}

}  // namespace purl
