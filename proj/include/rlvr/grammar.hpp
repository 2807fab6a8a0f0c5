#pragma once

#include <string>
#include <vector>

#include "rlvr/vocab.hpp"

namespace rlvr {

// Token-level grammar the sampler decodes under. The skeleton
//   <reasoning> filler* </reasoning> <answer> ANSWER </answer> EOS
// is enforced by masking; the policy chooses reasoning length and answer
// content. ANSWER depends on the question family read off the prompt's task
// marker: one class word, yes/no, rural/urban, a count word, or the
// [[ c , c , c , c ]] box sequence. Completions can still fail the format
// check by running out of budget before closing their tags.
class CompletionGrammar {
 public:
  enum class AnswerForm { ClassWord, YesNo, RuralUrban, CountWord, Box };

  CompletionGrammar(const Vocabulary& vocab, AnswerForm form);

  // Derives the answer form from the prompt's "[CLS] / [VQA] / [VG]" marker
  // and question wording. Throws on prompts without a known marker.
  static AnswerForm form_for_prompt(const std::string& prompt_text);

  void reset() { state_ = State::ReasonOpen; }
  bool done() const { return state_ == State::Done; }

  // Token ids legal at the current state, ascending.
  const std::vector<int>& allowed() const;

  // Consume one token; throws std::invalid_argument if it is not allowed.
  void advance(int token_id);

  AnswerForm form() const { return form_; }

 private:
  enum class State {
    ReasonOpen,
    ReasonBody,
    AnswerOpen,
    AnswerWord,
    BoxOpen,
    BoxCoord0,
    BoxComma0,
    BoxCoord1,
    BoxComma1,
    BoxCoord2,
    BoxComma2,
    BoxCoord3,
    BoxClose,
    AnswerClose,
    End,
    Done,
  };

  const std::vector<int>& table_(State s) const;

  const Vocabulary* vocab_;
  AnswerForm form_;
  State state_ = State::ReasonOpen;

  std::vector<int> reason_open_, reason_body_, answer_open_, answer_word_, box_open_, coords_,
      comma_, box_close_, answer_close_, eos_;
};

}  // namespace rlvr
