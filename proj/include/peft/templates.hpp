#pragma once

#include <string_view>

// Instruction-tuning prompt templates. A rendered prompt is
//   kHeader + <instruction> + kInputMarker + <input fields> + kResponseDelimiter + <scaffold>
// and the training target continues it with " " + response + EOS.
namespace peft::templates {

inline constexpr std::string_view kHeader =
    "Below is an instruction that describes a task, paired with an input that provides further context. "
    "Write a response that appropriately completes the request.\n\n### Instruction:\n";
inline constexpr std::string_view kInputMarker = "\n\n### Input:\n";
inline constexpr std::string_view kResponseDelimiter = "\n\n### Response:";

inline constexpr std::string_view kNliInstruction =
    "The task is to solve Natural Language Inference (NLI) problems. NLI is the task of determining whether the "
    "inference relation between the second sentence (Hypothesis) with respect to the first sentence (Premise) is "
    "one of the following:\n1. Entailment\n2. Neutral\n3. Contradiction\nOutput the relation number only.";
inline constexpr std::string_view kQaInstruction =
    "You will answer reading comprehension questions using information from a provided passage. Extract the exact "
    "answer from the passage without modification and present it in the following structured format:\n\n"
    "{'answer' : <Extracted Answer>}";
inline constexpr std::string_view kMcInstruction =
    "The task is to perform a reading comprehension task. Given the following passage, question, and answer "
    "choices, output the number corresponding to the correct answer only.";
inline constexpr std::string_view kArithInstruction =
    "Solve the following arithmetic problem. Output the final number only.";

inline constexpr std::string_view kNliScaffold = " The relation number is";
inline constexpr std::string_view kMcScaffold = " The correct choice number is";
inline constexpr std::string_view kQaScaffold = "\n{'answer':";
inline constexpr std::string_view kArithScaffold = "";

inline constexpr std::string_view kPremise = "Premise:\n";
inline constexpr std::string_view kHypothesis = "\nHypothesis:\n";
inline constexpr std::string_view kContext = "Context:\n";
inline constexpr std::string_view kPassage = "Passage:\n";
inline constexpr std::string_view kQuestionFirst = "Question:\n";
inline constexpr std::string_view kQuestion = "\nQuestion:\n";
inline constexpr std::string_view kChoices = "\nChoices:\n";

}  // namespace peft::templates
