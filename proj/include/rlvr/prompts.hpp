#pragma once

#include <string>

namespace rlvr::prompts {

// Conversation-level system prompt. It frames the tag protocol the format
// reward checks. It is attached to serialized pools/runs as metadata, not
// encoded into the model's token stream.
inline const std::string kBasicSystemPrompt =
    "A conversation between User and Assistant. The user asks a question, and the Assistant "
    "solves it. The assistant first thinks about the reasoning process in the mind and then "
    "provides the user with the answer. The reasoning process and answer are enclosed within "
    "<reasoning> </reasoning> and <answer> </answer> tags, respectively, i.e., "
    "<reasoning> reasoning process here </reasoning><answer> answer here </answer>";

// Verbose alternative kept for prompt-format experiments.
inline const std::string kDetailedSystemPrompt =
    "You are an expert to analyze the image and provide useful information for users. Imitate "
    "a chain of thought reasoning process like a human brain with as detail as possible. Use "
    "expressions like oh wait, let me think etc. Then reach to the conclusion and provide an "
    "answer. If question starts with VQA with brackets, final answer needs be one word only as "
    "yes or no, rural or urban etc. If question stars with CLS, you need to answer with one of "
    "the given classes, nothing else. If question starts with VG then mentions an object, you "
    "need to locate the object on the image and give the output [[x_min, y_min, x_max, y_max]], "
    "nothing else. Keep the values between 0 and 1000. If none of the abbreviations with "
    "brackets are given at the beginning, you will answer the question with one or two "
    "sentences. The reasoning process and answer are enclosed within <reasoning> </reasoning> "
    "and <answer> </answer> tags, respectively, i.e., <reasoning>...your reasoning "
    "here...</reasoning> <answer>...your answer here...</answer>";

// Question suffixes appended to every user prompt, by task family.
inline const std::string kAnswerSuffix =
    "Make your chain of thought reasoning and then answer the question using a single word or "
    "phrase.";
inline const std::string kGroundingSuffix =
    "Make your chain of thought reasoning and then output the bounding box of the following "
    "object in the image.";

// Question cores. {p} = shape plural, {s} = shape singular, {c} = color.
inline const std::string kClsCore = "[CLS] Classify the scene shown in the image.";
inline const std::string kVqaPresenceCore = "[VQA] Are there any {c} {p} in the image?";
inline const std::string kVqaCountCore = "[VQA] How many {p} are there in the image?";
inline const std::string kVqaCompareCore = "[VQA] Are there more {p} than {p2} in the image?";
inline const std::string kVqaRuralUrbanCore = "[VQA] Is this a rural or urban scene?";
inline const std::string kVgCore = "[VG] the {c} {s}.";

}  // namespace rlvr::prompts
