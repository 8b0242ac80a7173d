#include "wmax/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "wmax/errors.hpp"

namespace wmax {

namespace {
constexpr const char* kFormatName = "wmax-checkpoint";
constexpr int kFormatVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const NetworkParams& params,
                     std::uint64_t seed) {
  params.validate();
  nlohmann::json doc;
  doc["format"] = kFormatName;
  doc["version"] = kFormatVersion;
  doc["seed"] = seed;
  doc["layer_sizes"] = params.layer_sizes;
  auto& layers = doc["layers"] = nlohmann::json::array();
  for (const auto& layer : params.layers) {
    nlohmann::json entry;
    auto& weights = entry["weights"] = nlohmann::json::array();
    for (int r = 0; r < layer.weights.rows(); ++r) {
      for (int c = 0; c < layer.weights.cols(); ++c) {
        weights.push_back(layer.weights(r, c));
      }
    }
    auto& biases = entry["biases"] = nlohmann::json::array();
    for (int r = 0; r < layer.biases.size(); ++r) {
      biases.push_back(layer.biases(r));
    }
    layers.push_back(std::move(entry));
  }

  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open checkpoint for writing: " + path);
  }
  out << doc.dump(2) << "\n";
  if (!out) {
    throw IoError("failed writing checkpoint: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open checkpoint: " + path);
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kFormatName ||
        doc.at("version").get<int>() != kFormatVersion) {
      throw IoError("unsupported checkpoint format in " + path);
    }
    Checkpoint ckpt;
    ckpt.seed = doc.at("seed").get<std::uint64_t>();
    ckpt.params.layer_sizes = doc.at("layer_sizes").get<std::vector<int>>();
    const auto& layers = doc.at("layers");
    for (std::size_t l = 0; l + 1 < ckpt.params.layer_sizes.size(); ++l) {
      const int fan_in = ckpt.params.layer_sizes[l];
      const int fan_out = ckpt.params.layer_sizes[l + 1];
      const auto weights = layers.at(l).at("weights").get<std::vector<double>>();
      const auto biases = layers.at(l).at("biases").get<std::vector<double>>();
      if (static_cast<int>(weights.size()) != fan_out * fan_in ||
          static_cast<int>(biases.size()) != fan_out) {
        throw IoError("checkpoint layer " + std::to_string(l) +
                      " does not match layer_sizes in " + path);
      }
      LayerParams layer;
      layer.weights.resize(fan_out, fan_in);
      for (int r = 0; r < fan_out; ++r) {
        for (int c = 0; c < fan_in; ++c) {
          layer.weights(r, c) = weights[static_cast<std::size_t>(r) * fan_in + c];
        }
      }
      layer.biases = Eigen::Map<const VectorXd>(biases.data(), fan_out);
      ckpt.params.layers.push_back(std::move(layer));
    }
    ckpt.params.validate();
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace wmax
