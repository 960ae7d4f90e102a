#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nesy/evaluator.hpp"
#include "nesy/grounding.hpp"
#include "nesy/knowledge.hpp"
#include "nesy/model.hpp"

namespace nesy {

// The zebra/quagga demo: datasets, a pretrained CNN, concept probes and the
// rules used to query and correct it.
namespace scenario {

inline constexpr const char* kQuagga = "img_qua";
inline constexpr const char* kZebraRule = "forall x in test: equid(x) & stripe(x) -> zebra(x)";
inline constexpr const char* kCorrectionRule = "forall x in val: equid(x) & stripe(x) & ~bw(x) -> ~zebra(x)";
inline constexpr const char* kCorrectionRuleCol = "forall x in val: equid(x) & stripe(x) & col(x) -> ~zebra(x)";

// train, test, concepts, val and the single-image quagga set.
void add_datasets(DatasetTable& table, std::uint64_t seed);

TaskTrainConfig task_config();

// Class predicates zebra/horse/textile/other, sigmoid probes
// stripe/dots/zigzag/equid and the exclusive bw/col group, all on "flat".
// Example sets come from the "concepts" dataset.
std::map<std::string, ProbeReport> register_predicates(PredicateRegistry& registry, const Model& model,
                                                        const DatasetTable& datasets, std::uint64_t seed);

// Constraint retraining preset: conv layers frozen, strong task retention.
TrainConfig retrain_config();

}  // namespace scenario
}  // namespace nesy
