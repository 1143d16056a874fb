#include "cpl/corpus_store.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "cpl/errors.hpp"

namespace cpl {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

std::int32_t position_field(const nlohmann::json& record, const char* key,
                            const std::string& where) {
  if (!record.contains(key) || !record[key].is_number_integer()) {
    throw ParseError(where + ": missing or non-integer field '" + key + "'");
  }
  return record[key].get<std::int32_t>();
}

}  // namespace

Corpus Corpus::load(const std::filesystem::path& path, const KnowledgeGraph& kg,
                    CorpusOptions options, const Corpus* vocab_source) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file " + path.string());
  return parse(in, kg, options, vocab_source, path.string());
}

Corpus Corpus::parse(std::istream& in, const KnowledgeGraph& kg, CorpusOptions options,
                     const Corpus* vocab_source, std::string_view source_name) {
  Corpus corpus;
  if (vocab_source != nullptr) {
    corpus.words_ = vocab_source->words_;
  } else {
    corpus.words_.add("<unk>");
  }
  const bool frozen_vocab = vocab_source != nullptr;
  const auto max_len = static_cast<std::int32_t>(std::max<std::size_t>(options.max_sentence_length, 2));

  std::map<EntityPair, std::vector<Sentence>> grouped;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = std::string(source_name) + ":" + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    for (const char* key : {"sentence", "head", "tail"}) {
      if (!record.contains(key) || !record[key].is_string())
        throw ParseError(where + ": missing string field '" + key + "'");
    }
    const auto head_name = record["head"].get<std::string>();
    const auto tail_name = record["tail"].get<std::string>();
    const auto head = kg.entities().find(head_name);
    const auto tail = kg.entities().find(tail_name);
    if (!head || !tail) {
      throw IngestionError(where + ": unknown entity in record " + record.dump());
    }
    auto words = split_ws(record["sentence"].get<std::string>());
    auto head_pos = position_field(record, "head_pos", where);
    auto tail_pos = position_field(record, "tail_pos", where);
    const auto n = static_cast<std::int32_t>(words.size());
    if (head_pos < 0 || tail_pos < 0 || head_pos >= n || tail_pos >= n || head_pos == tail_pos) {
      throw ParseError(where + ": invalid mention positions");
    }

    // Clip to max_len tokens while keeping both mentions inside the window.
    std::int32_t start = 0;
    std::int32_t stop = n;
    if (n > max_len) {
      const auto lo = std::min(head_pos, tail_pos);
      const auto hi = std::max(head_pos, tail_pos);
      if (hi < max_len) {
        stop = max_len;
      } else if (hi - lo < max_len) {
        start = hi - max_len + 1;
        stop = hi + 1;
      }
    }

    Sentence s;
    s.pair = {*head, *tail};
    s.head_pos = head_pos - start;
    s.tail_pos = tail_pos - start;
    s.text = record["sentence"].get<std::string>();
    s.tokens.reserve(static_cast<std::size_t>(stop - start));
    for (auto i = start; i < stop; ++i) {
      const auto& w = words[static_cast<std::size_t>(i)];
      if (frozen_vocab) {
        s.tokens.push_back(corpus.words_.find(w).value_or(kUnknownToken));
      } else {
        s.tokens.push_back(corpus.words_.add(w));
      }
    }
    grouped[s.pair].push_back(std::move(s));
    ++corpus.sentence_count_;
  }

  corpus.bags_.reserve(grouped.size());
  for (auto& [pair, sentences] : grouped) {
    corpus.bags_.push_back(SentenceBag{pair, std::move(sentences)});
  }
  corpus.finalize(kg.entity_count());
  return corpus;
}

void Corpus::finalize(std::size_t entity_count) {
  subject_index_.assign(entity_count, {0, 0});
  std::size_t i = 0;
  while (i < bags_.size()) {
    const auto subject = bags_[i].pair.first;
    std::size_t j = i;
    while (j < bags_.size() && bags_[j].pair.first == subject) ++j;
    subject_index_[static_cast<std::size_t>(subject)] = {i, j};
    i = j;
  }
}

std::span<const SentenceBag> Corpus::bags_for_subject(EntityId e) const {
  if (e < 0 || static_cast<std::size_t>(e) >= subject_index_.size()) return {};
  const auto [begin, end] = subject_index_[static_cast<std::size_t>(e)];
  return std::span<const SentenceBag>(bags_).subspan(begin, end - begin);
}

const SentenceBag* Corpus::find_bag(EntityPair pair) const {
  const auto bags = bags_for_subject(pair.first);
  auto it = std::lower_bound(bags.begin(), bags.end(), pair.second,
                             [](const SentenceBag& b, EntityId obj) { return b.pair.second < obj; });
  if (it == bags.end() || it->pair != pair) return nullptr;
  return &*it;
}

std::vector<BagLabel> distant_supervision_labels(const Corpus& corpus, const KnowledgeGraph& kg) {
  std::vector<BagLabel> labels;
  const auto forward = static_cast<RelationId>(kg.base_relation_count());
  const auto bags = corpus.bags();
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const auto [h, t] = bags[i].pair;
    bool matched = false;
    for (const auto& edge : kg.base_out_edges(h)) {
      if (edge.target == t && edge.relation < forward) {
        labels.push_back(BagLabel{i, edge.relation});
        matched = true;
      }
    }
    if (!matched) labels.push_back(BagLabel{i, no_relation_id(kg)});
  }
  return labels;
}

}  // namespace cpl
