#include "rlvr/grammar.hpp"

#include <algorithm>
#include <stdexcept>

namespace rlvr {

CompletionGrammar::CompletionGrammar(const Vocabulary& vocab, AnswerForm form)
    : vocab_(&vocab), form_(form) {
  reason_open_ = {vocab.reasoning_open()};
  reason_body_ = vocab.filler_tokens();
  reason_body_.push_back(vocab.reasoning_close());
  std::sort(reason_body_.begin(), reason_body_.end());
  answer_open_ = {vocab.answer_open()};
  switch (form) {
    case AnswerForm::ClassWord: answer_word_ = vocab.class_tokens(); break;
    case AnswerForm::YesNo: answer_word_ = vocab.yes_no_tokens(); break;
    case AnswerForm::RuralUrban: answer_word_ = vocab.rural_urban_tokens(); break;
    case AnswerForm::CountWord: answer_word_ = vocab.count_tokens(); break;
    case AnswerForm::Box: break;
  }
  std::sort(answer_word_.begin(), answer_word_.end());
  box_open_ = {vocab.bbox_open()};
  coords_.reserve(101);
  for (int k = 0; k <= 100; ++k) coords_.push_back(vocab.coord_token(k));
  comma_ = {vocab.comma()};
  box_close_ = {vocab.bbox_close()};
  answer_close_ = {vocab.answer_close()};
  eos_ = {vocab.eos()};
}

CompletionGrammar::AnswerForm CompletionGrammar::form_for_prompt(const std::string& prompt_text) {
  if (prompt_text.rfind("[CLS]", 0) == 0) return AnswerForm::ClassWord;
  if (prompt_text.rfind("[VG]", 0) == 0) return AnswerForm::Box;
  if (prompt_text.rfind("[VQA]", 0) == 0) {
    if (prompt_text.find("How many") != std::string::npos) return AnswerForm::CountWord;
    if (prompt_text.find("rural or urban") != std::string::npos) return AnswerForm::RuralUrban;
    return AnswerForm::YesNo;
  }
  throw std::invalid_argument("prompt has no [CLS]/[VQA]/[VG] marker: " + prompt_text);
}

const std::vector<int>& CompletionGrammar::table_(State s) const {
  switch (s) {
    case State::ReasonOpen: return reason_open_;
    case State::ReasonBody: return reason_body_;
    case State::AnswerOpen: return answer_open_;
    case State::AnswerWord: return answer_word_;
    case State::BoxOpen: return box_open_;
    case State::BoxCoord0:
    case State::BoxCoord1:
    case State::BoxCoord2:
    case State::BoxCoord3: return coords_;
    case State::BoxComma0:
    case State::BoxComma1:
    case State::BoxComma2: return comma_;
    case State::BoxClose: return box_close_;
    case State::AnswerClose: return answer_close_;
    case State::End: return eos_;
    default: throw std::logic_error("allowed() after EOS");
  }
}

const std::vector<int>& CompletionGrammar::allowed() const { return table_(state_); }

void CompletionGrammar::advance(int token_id) {
  const auto& ok = table_(state_);
  if (!std::binary_search(ok.begin(), ok.end(), token_id))
    throw std::invalid_argument("grammar: token " + std::to_string(token_id) +
                                " not legal in current state");
  switch (state_) {
    case State::ReasonOpen: state_ = State::ReasonBody; break;
    case State::ReasonBody:
      if (token_id == vocab_->reasoning_close()) state_ = State::AnswerOpen;
      break;
    case State::AnswerOpen:
      state_ = form_ == AnswerForm::Box ? State::BoxOpen : State::AnswerWord;
      break;
    case State::AnswerWord: state_ = State::AnswerClose; break;
    case State::BoxOpen: state_ = State::BoxCoord0; break;
    case State::BoxCoord0: state_ = State::BoxComma0; break;
    case State::BoxComma0: state_ = State::BoxCoord1; break;
    case State::BoxCoord1: state_ = State::BoxComma1; break;
    case State::BoxComma1: state_ = State::BoxCoord2; break;
    case State::BoxCoord2: state_ = State::BoxComma2; break;
    case State::BoxComma2: state_ = State::BoxCoord3; break;
    case State::BoxCoord3: state_ = State::BoxClose; break;
    case State::BoxClose: state_ = State::AnswerClose; break;
    case State::AnswerClose: state_ = State::End; break;
    case State::End: state_ = State::Done; break;
    default: throw std::logic_error("advance() after EOS");
  }
}

}  // namespace rlvr
