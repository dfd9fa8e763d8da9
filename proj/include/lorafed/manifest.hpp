#pragma once

#include <json.hpp>

#include "lorafed/data.hpp"

namespace lorafed {

/// Shard manifest: per client, its sample indices and class histogram.
inline nlohmann::ordered_json shard_manifest(const Partition& part) {
  nlohmann::ordered_json j;
  j["dirichlet_alpha"] = part.spec.dirichlet_alpha;
  j["clients"] = part.spec.clients;
  j["seed"] = part.spec.seed;
  j["heterogeneity_index"] = heterogeneity_index(part.spec);
  auto& shards = j["shards"] = nlohmann::ordered_json::array();
  for (const auto& s : part.shards) {
    nlohmann::ordered_json e;
    e["client_id"] = s.client_id;
    e["n_train"] = s.train.size();
    e["n_validation"] = s.validation.size();
    e["class_histogram"] = s.class_histogram;
    e["train"] = s.train;
    e["validation"] = s.validation;
    shards.push_back(std::move(e));
  }
  return j;
}

}  // namespace lorafed
