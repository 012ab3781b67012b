#pragma once

#include <filesystem>
#include <string>

namespace dqa {

/// Prompt texts used by question generation, answer verification and the
/// judge. Defaults are built in; a prompts directory may override any of them
/// with a file of the same name (verification_role.txt,
/// verification_instruction.txt, question_generation.txt, cloze_rewrite.txt,
/// judge.txt).
struct prompt_set {
    /// System message for answer verification.
    std::string verification_role;
    /// Final instruction appended after the current question/answer pair.
    std::string verification_instruction;
    /// Direct generation instruction; "{N}" becomes e.g. "at least four".
    std::string question_generation;
    /// Appended after a fill-in-the-blank sentence.
    std::string cloze_rewrite;
    /// Judge prompt with "[The Patient's Discharge Instruction]" and
    /// "[The Conversation History]" placeholders.
    std::string judge_template;

    static const prompt_set& defaults();
    static prompt_set load(const std::filesystem::path& dir);

    friend bool operator==(const prompt_set&, const prompt_set&) = default;
};

inline constexpr std::string_view note_placeholder = "[The Patient's Discharge Instruction]";
inline constexpr std::string_view history_placeholder = "[The Conversation History]";

}  // namespace dqa
