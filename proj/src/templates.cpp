#include "topa/templates.hpp"

#include "topa/error.hpp"

namespace topa {

const char* to_string(TaskType task) {
    switch (task) {
        case TaskType::Summarization: return "summarization";
        case TaskType::OpenQA: return "open_qa";
        case TaskType::MultiChoice: return "multi_choice";
    }
    return "summarization";
}

char option_letter(int index) {
    if (index < 0 || index > 4) {
        throw Error(ErrorCode::AnswerOutOfRange, "option index " + std::to_string(index));
    }
    return static_cast<char>('A' + index);
}

int option_index(char letter) {
    if (letter >= 'A' && letter <= 'E') return letter - 'A';
    if (letter >= 'a' && letter <= 'e') return letter - 'a';
    return -1;
}

namespace {

std::string choices_block(const std::vector<std::string>& options) {
    std::string out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i > 0) out += " ";
        out += "(";
        out += option_letter(static_cast<int>(i));
        out += "): " + options[i] + ".";
    }
    return out;
}

}  // namespace

RenderedPrompt PromptTemplateSet::summarization(const std::string& dense_description) {
    RenderedPrompt p;
    p.task = TaskType::Summarization;
    p.pre_video = "Instruction: Generate a dense description for the video.\nVideo: ";
    p.post_video = ".\nDescription:";
    p.target = dense_description;
    return p;
}

RenderedPrompt PromptTemplateSet::open_qa(const QAItem& item) {
    if (item.options.empty() || item.answer_index < 0 ||
        item.answer_index >= static_cast<int>(item.options.size())) {
        throw Error(ErrorCode::AnswerOutOfRange, "open_qa item without a valid answer");
    }
    RenderedPrompt p = open_qa_context(item.question);
    p.target = item.options[static_cast<std::size_t>(item.answer_index)];
    return p;
}

RenderedPrompt PromptTemplateSet::open_qa_context(const std::string& question) {
    RenderedPrompt p;
    p.task = TaskType::OpenQA;
    p.pre_video = "Instruction: Predict the answer based on the video and question.\nVideo: ";
    p.post_video = ".\nQuestion: " + question + ".\nAnswer:";
    return p;
}

RenderedPrompt PromptTemplateSet::multi_choice(const QAItem& item) {
    if (item.answer_index < 0 || item.answer_index >= static_cast<int>(item.options.size())) {
        throw Error(ErrorCode::AnswerOutOfRange, "multi_choice item without a valid answer");
    }
    RenderedPrompt p = multi_choice_context(item.question, item.options);
    p.target = std::string("The correct choice is (") + option_letter(item.answer_index) + ").";
    return p;
}

RenderedPrompt PromptTemplateSet::multi_choice_context(const std::string& question,
                                                       const std::vector<std::string>& options) {
    RenderedPrompt p;
    p.task = TaskType::MultiChoice;
    p.pre_video = "Instruction: Choose the correct answer based on the video and question.\nVideo: ";
    p.post_video =
        ".\nQuestion: " + question + ".\nChoices:\n" + choices_block(options) + "\nAnswer:";
    return p;
}

std::string full_prompt_text(const RenderedPrompt& prompt, const std::string& slot) {
    std::string out = prompt.pre_video + slot + prompt.post_video;
    if (!prompt.target.empty()) out += " " + prompt.target;
    return out;
}

}  // namespace topa
