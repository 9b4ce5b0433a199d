#pragma once

#include <string>
#include <vector>

#include "topa/tideo.hpp"

namespace topa {

enum class TaskType { Summarization, OpenQA, MultiChoice };

const char* to_string(TaskType task);

/// One rendered task prompt, split around the feature slot. pre_video ends
/// immediately before the slot; post_video runs from immediately after it
/// through the answer cue; target is the supervised continuation.
struct RenderedPrompt {
    TaskType task = TaskType::Summarization;
    std::string pre_video;
    std::string post_video;
    std::string target;
};

/// Option letter for index 0..4 -> 'A'..'E'.
char option_letter(int index);
/// -1 when the letter is not a valid option letter.
int option_index(char letter);

/// The three task prompt texts. Rendering is byte-deterministic.
struct PromptTemplateSet {
    static RenderedPrompt summarization(const std::string& dense_description);
    static RenderedPrompt open_qa(const QAItem& item);
    static RenderedPrompt multi_choice(const QAItem& item);

    /// Context-only variants used at evaluation time (no target text).
    static RenderedPrompt open_qa_context(const std::string& question);
    static RenderedPrompt multi_choice_context(const std::string& question,
                                               const std::vector<std::string>& options);
};

/// Full prompt bytes with `slot` standing in for the feature block.
std::string full_prompt_text(const RenderedPrompt& prompt,
                             const std::string& slot = "{f_1,...,f_n}");

}  // namespace topa
