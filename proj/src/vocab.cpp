#include "rlvr/vocab.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "rlvr/prompts.hpp"

namespace rlvr {

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> v = {"tank",     "plane", "ship", "building",
                                             "tree",     "field", "road", "pond"};
  return v;
}

const std::vector<std::string>& shape_plurals() {
  static const std::vector<std::string> v = {"tanks",     "planes", "ships", "buildings",
                                             "trees",     "fields", "roads", "ponds"};
  return v;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> v = {"red", "blue", "green", "gray"};
  return v;
}

int Vocabulary::intern_(const std::string& tok) {
  auto it = index_.find(tok);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(tok);
  index_.emplace(tok, id);
  return id;
}

Vocabulary::Vocabulary() {
  pad_ = intern_("<pad>");
  bos_ = intern_("<bos>");
  eos_ = intern_("<eos>");

  reasoning_open_ = intern_("<reasoning>");
  reasoning_close_ = intern_("</reasoning>");
  answer_open_ = intern_("<answer>");
  answer_close_ = intern_("</answer>");

  bbox_open_ = intern_("[[");
  bbox_close_ = intern_("]]");
  comma_ = intern_(",");

  yes_no_tokens_ = {intern_("yes"), intern_("no")};
  rural_urban_tokens_ = {intern_("rural"), intern_("urban")};

  static const char* kCounts[] = {"zero", "one", "two",   "three", "four",  "five",  "six",
                                  "seven", "eight", "nine", "ten",  "eleven", "twelve"};
  for (const char* w : kCounts) count_tokens_.push_back(intern_(w));

  for (const auto& s : shape_names()) class_tokens_.push_back(intern_(s));
  for (const auto& s : shape_plurals()) intern_(s);
  for (const auto& c : color_names()) intern_(c);

  coord_first_ = static_cast<int>(tokens_.size());
  for (int k = 0; k <= 100; ++k) intern_(std::to_string(10 * k));

  static const char* kFiller[] = {"observe", "region", "grid",  "pattern", "cluster", "rows",
                                  "near",    "edge",   "center", "spread",  "dense",   "sparse"};
  for (const char* w : kFiller) filler_tokens_.push_back(intern_(w));

  // Harvest every word reachable from the question templates so any rendered
  // prompt encodes cleanly.
  std::vector<std::string> sentences = {prompts::kClsCore, prompts::kVqaRuralUrbanCore,
                                        prompts::kAnswerSuffix, prompts::kGroundingSuffix};
  for (size_t s = 0; s < shape_names().size(); ++s) {
    const std::string& sing = shape_names()[s];
    const std::string& plur = shape_plurals()[s];
    sentences.push_back(replace_all(prompts::kVqaCountCore, "{p}", plur));
    for (const auto& c : color_names()) {
      sentences.push_back(
          replace_all(replace_all(prompts::kVqaPresenceCore, "{c}", c), "{p}", plur));
      sentences.push_back(replace_all(replace_all(prompts::kVgCore, "{c}", c), "{s}", sing));
    }
    for (const auto& other : shape_plurals())
      sentences.push_back(
          replace_all(replace_all(prompts::kVqaCompareCore, "{p}", plur), "{p2}", other));
  }
  for (const auto& sent : sentences)
    for (const auto& w : split_words(sent)) intern_(w);
}

int Vocabulary::coord_token(int bin) const {
  if (bin < 0 || bin > 100) throw std::invalid_argument("coord bin out of [0,100]");
  return coord_first_ + bin;
}

bool Vocabulary::is_coord(int id) const { return id >= coord_first_ && id <= coord_first_ + 100; }

int Vocabulary::coord_value(int id) const {
  if (!is_coord(id)) throw std::invalid_argument("not a coordinate token");
  return 10 * (id - coord_first_);
}

int Vocabulary::nearest_coord_bin(int value_0_1000) {
  int v = std::clamp(value_0_1000, 0, 1000);
  return (v + 5) / 10;
}

int Vocabulary::count_word_token(int n) const {
  if (n < 0 || n >= static_cast<int>(count_tokens_.size()))
    throw std::invalid_argument("count word out of range: " + std::to_string(n));
  return count_tokens_[n];
}

std::optional<int> Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) {
    auto id = lookup(w);
    if (!id) throw std::invalid_argument("encode: unknown token '" + w + "'");
    if (*id == pad_ || *id == bos_ || *id == eos_)
      throw std::invalid_argument("encode: control token '" + w + "' not allowed in text");
    out.push_back(*id);
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == pad_ || id == bos_ || id == eos_) continue;
    if (id < 0 || id >= size()) throw std::invalid_argument("decode: id out of range");
    if (!out.empty()) out += ' ';
    out += tokens_[id];
  }
  return out;
}

}  // namespace rlvr
