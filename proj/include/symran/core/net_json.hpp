#pragma once

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/core/net.hpp"

namespace symran {

inline nlohmann::json net_to_json(const FeedForwardNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& L : net.layers()) {
    layers.push_back({{"in", L.in()},
                      {"out", L.out()},
                      {"activation", std::string(to_string(L.activation))},
                      {"weights", L.weight.data()},
                      {"bias", L.bias}});
  }
  return {{"version", 1}, {"layers", layers}};
}

inline FeedForwardNet net_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw ArtifactError("network JSON: unsupported version");
    std::vector<Layer> layers;
    for (const auto& jl : j.at("layers")) {
      const auto in = jl.at("in").get<std::size_t>();
      const auto out = jl.at("out").get<std::size_t>();
      auto w = jl.at("weights").get<std::vector<double>>();
      auto b = jl.at("bias").get<std::vector<double>>();
      if (w.size() != in * out || b.size() != out)
        throw ArtifactError("network JSON: layer array sizes do not match dimensions");
      layers.push_back({Matrix(out, in, std::move(w)), std::move(b),
                        activation_from_string(jl.at("activation").get<std::string>())});
    }
    return FeedForwardNet(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("network JSON: ") + e.what());
  } catch (const DimensionError& e) {
    throw ArtifactError(std::string("network JSON: ") + e.what());
  }
}

}  // namespace symran
