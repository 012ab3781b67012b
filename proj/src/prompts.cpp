#include "dqa/prompts.hpp"

#include "dqa/errors.hpp"

#include <fstream>
#include <sstream>

namespace dqa {

namespace {

constexpr const char* judge_text =
    "You are a physician who wants to evaluate how helpful an AI model is for educating patients. "
    "The model asks the patient questions, then verifies the patient's answers, in order to help "
    "patients memorize their discharge instructions.\n"
    "\n"
    "Four evaluation aspects for AI model’s question quality includes:\n"
    "\n"
    "Coverage: Does the conversation cover the cloze test in the evaluation?\n"
    "\n"
    "Question Appropriateness: Are the answers to the questions contained in the discharge instruction?\n"
    "\n"
    "Education Outcome: Do you think the chatbot helps patients understand their discharge instructions?\n"
    "\n"
    "Overall: How do you like the general experience with the chatbot considering the above aspects?\n"
    "\n"
    "Two evaluation aspects of the AI model’s feedback includes:\n"
    "\n"
    "Correctness: Are the responses from the AI model factually correct?\n"
    "\n"
    "Education Potential: Do the AI model's responses provide helpful information for educating patients?\n"
    "\n"
    "5-point Likert scale:\n"
    "\n"
    "1: very low rating\n"
    "\n"
    "2: low rating\n"
    "\n"
    "3: neutral or medium rating\n"
    "\n"
    "4: higher rating\n"
    "\n"
    "5: very highly rating\n"
    "\n"
    "The patient's discharge instructions: [The Patient's Discharge Instruction]\n"
    "\n"
    "The conversation between the patient and the AI model: [The Conversation History]\n"
    "\n"
    "Give the 5-point Likert scale of the AI model's question quality (four aspects) and answer "
    "feedback (two aspects) one by one. Return the scores as dictionary objects, adhering to the "
    "following structure:\n"
    "{\"Coverage\": ..., \"Question Appropriateness\": ...}.\n"
    "Please provide your response solely in the dictionary format without including any additional text.";

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw config_error("cannot read prompt file " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace

const prompt_set& prompt_set::defaults() {
    static const prompt_set set{
        "As a physician, your goal in the conversation is to help your patient better understand the "
        "discharge instructions before they leave the hospital.",
        "verify if the patient's answer is correct, incorrect, or partially correct, and generate a "
        "suitable response to improve the patient's comprehension of this question.",
        "Generate {N} questions to help the patient understand crucial medical events in the above "
        "discharge instruction.",
        "Generate a simple question targeting the blank in the above sentence.",
        judge_text,
    };
    return set;
}

prompt_set prompt_set::load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw config_error("prompts directory " + dir.string() + " does not exist");
    }
    prompt_set out = defaults();
    auto override_with = [&](const char* name, std::string& slot) {
        const auto p = dir / name;
        if (std::filesystem::exists(p)) slot = read_file(p);
    };
    override_with("verification_role.txt", out.verification_role);
    override_with("verification_instruction.txt", out.verification_instruction);
    override_with("question_generation.txt", out.question_generation);
    override_with("cloze_rewrite.txt", out.cloze_rewrite);
    override_with("judge.txt", out.judge_template);
    return out;
}

}  // namespace dqa
