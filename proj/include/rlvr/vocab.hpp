#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace rlvr {

// Fixed compact vocabulary shared by the task generator and the policy.
// Tokens are whole strings joined/split on single spaces:
//   decode(encode(s)) == s  for any s composed of text tokens.
// PAD/BOS/EOS are control tokens: decode() skips them and encode() never
// produces them, so they live outside the text token set. The four tag
// tokens are ordinary (atomic) text tokens.
class Vocabulary {
 public:
  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int pad() const { return pad_; }
  int bos() const { return bos_; }
  int eos() const { return eos_; }
  int reasoning_open() const { return reasoning_open_; }
  int reasoning_close() const { return reasoning_close_; }
  int answer_open() const { return answer_open_; }
  int answer_close() const { return answer_close_; }
  int bbox_open() const { return bbox_open_; }
  int bbox_close() const { return bbox_close_; }
  int comma() const { return comma_; }

  // Coordinate bin k <-> integer 10k on the 0-1000 scale.
  int coord_token(int bin) const;        // bin in [0, 100]
  bool is_coord(int id) const;
  int coord_value(int id) const;         // token id -> integer value (multiple of 10)
  static int nearest_coord_bin(int value_0_1000);

  const std::vector<int>& class_tokens() const { return class_tokens_; }      // 8 scene classes
  const std::vector<int>& yes_no_tokens() const { return yes_no_tokens_; }
  const std::vector<int>& rural_urban_tokens() const { return rural_urban_tokens_; }
  const std::vector<int>& count_tokens() const { return count_tokens_; }      // "zero".."twelve"
  const std::vector<int>& filler_tokens() const { return filler_tokens_; }

  int count_word_token(int n) const;  // n in [0, 12]

  std::optional<int> lookup(const std::string& token) const;

  // Throws std::invalid_argument on any whitespace-delimited word not in the
  // vocabulary (control tokens included).
  std::vector<int> encode(const std::string& text) const;

  // Joins token strings with single spaces, skipping PAD/BOS/EOS.
  std::string decode(const std::vector<int>& ids) const;

 private:
  int intern_(const std::string& tok);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int pad_ = -1, bos_ = -1, eos_ = -1;
  int reasoning_open_ = -1, reasoning_close_ = -1, answer_open_ = -1, answer_close_ = -1;
  int bbox_open_ = -1, bbox_close_ = -1, comma_ = -1;
  int coord_first_ = -1;
  std::vector<int> class_tokens_, yes_no_tokens_, rural_urban_tokens_, count_tokens_, filler_tokens_;
};

// Shape and palette names shared with the scene generator.
const std::vector<std::string>& shape_names();    // 8 entries; index = shape code - 1
const std::vector<std::string>& shape_plurals();  // aligned with shape_names()
const std::vector<std::string>& color_names();    // 4 entries; index = color code - 1

}  // namespace rlvr
