#include "nesy/scenario.hpp"

#include "nesy/synth.hpp"

namespace nesy::scenario {

void add_datasets(DatasetTable& table, std::uint64_t seed) {
  for (const auto& cfg : {Scenario::train(seed), Scenario::test(seed), Scenario::concepts(seed), Scenario::val(seed),
                          Scenario::quagga(seed)})
    table.put(generate(cfg));
}

TaskTrainConfig task_config() {
  TaskTrainConfig c;
  c.epochs = 12;
  return c;
}

std::map<std::string, ProbeReport> register_predicates(PredicateRegistry& registry, const Model& model,
                                                        const DatasetTable& datasets, std::uint64_t seed) {
  const auto& classes = model.class_names();
  const char* names[] = {"zebra", "horse", "textile", "other"};
  for (std::size_t k = 0; k < 4; ++k) registry.register_class_predicate(names[k], k, classes.size());

  const auto pool = datasets.get("concepts");
  const ProbeTrainConfig pc;
  std::map<std::string, ProbeReport> reports;
  const std::pair<const char*, const char*> probes[] = {
      {"stripe", "stripes"}, {"dots", "dots"}, {"zigzag", "zigzag"}, {"equid", "equid"}};
  for (const auto& [predicate, concept_name] : probes)
    reports[predicate] = train_probe(registry, model, predicate, Model::probe_layer(),
                                     make_concept_sets(*pool, concept_name, 150, 150, seed + 1), pc);

  const ConceptExampleSet bw = make_concept_sets(*pool, "bw", 150, 150, seed + 1);
  ConceptExampleSet col;
  col.name = "col";
  col.positives = bw.negatives;
  for (auto& [name, r] : register_exclusive_group(registry, model, {"bw", "col"}, Model::probe_layer(), {bw, col}, pc))
    reports[name] = r;
  return reports;
}

TrainConfig retrain_config() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.lambda = 0.7;
  c.freeze_conv = true;
  return c;
}

}  // namespace nesy::scenario
