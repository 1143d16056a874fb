#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cpl/graph_store.hpp"
#include "cpl/inference.hpp"

namespace cpl {

// Planted pattern rq <= r1 . r2 over layers A -r1-> B -r2-> C plus a noise
// relation r4 among A and D. A fraction of the r1 "bridge" edges exists only
// as sentences in the corpus.
struct SyntheticSpec {
  std::size_t entities = 200;
  std::size_t horizon = 3;
  std::size_t pattern_hops = 2;
  double corpus_fraction = 0.5;   // f
  double a_share = 0.45;          // entity share of each layer
  double b_share = 0.25;
  double c_share = 0.15;          // D gets the rest
  double noise_prob = 0.5;        // A entity has an r4 edge into D
  std::size_t d_noise_edges = 2;  // r4 edges per D entity, within D
  double corpus_noise_prob = 0.5; // A entity has a corpus-only r4 fact
  std::size_t sentences_per_fact = 2;
  double r2_sentence_prob = 0.3;  // r2 edge also described in text
  std::size_t distractors_per_entity = 2;  // co-mentions with no relation
  double valid_fraction = 0.2;
  double test_fraction = 0.2;
};

struct SyntheticDataset {
  KnowledgeGraph kg;                // reasoning graph, no inverse edges yet
  std::vector<Triple> corpus_facts; // facts present only in text
  std::vector<std::string> corpus_lines;  // JSON-lines records
  std::vector<Query> train, valid, test;
  std::size_t bridges = 0;
  std::size_t moved_bridges = 0;
  std::size_t dropped_queries = 0;
};

// Throws ConfigError when the pattern needs more hops than the horizon.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Length of the shortest path from `from` to `to` using `edges` and their
// inverses, or -1 when longer than `max_hops`.
int shortest_path_hops(const KnowledgeGraph& kg, std::span<const Triple> extra, EntityId from,
                       EntityId to, std::size_t max_hops, const Triple* excluded = nullptr);

// Every query labelled "kg" is reachable in the graph; every "corpus" query
// only with the corpus facts.
bool verify_synthetic(const SyntheticDataset& data, std::size_t horizon);

// graph.txt, entities.txt, relations.txt, corpus.jsonl, corpus_facts.txt,
// {train,valid,test}_queries.txt and synthetic.json.
void write_synthetic(const SyntheticDataset& data, const SyntheticSpec& spec, std::uint64_t seed,
                     const std::filesystem::path& dir);

}  // namespace cpl
