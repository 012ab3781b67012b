/**
 * @file errors.hpp
 * @brief Exception hierarchy shared by every dischargeqa module
 *
 * Every failure raised by the library derives from dqa::error and carries a
 * stable machine-readable code. The service layer maps codes onto HTTP
 * statuses and the CLI prints them verbatim.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dqa {

class error : public std::runtime_error {
public:
    error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    /// Stable identifier such as "InvalidNote" or "FixtureMiss".
    [[nodiscard]] const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define DQA_DEFINE_ERROR(name, code_string)                                   \
    class name : public error {                                               \
    public:                                                                   \
        explicit name(const std::string& message) : error(code_string, message) {} \
    }

// corpus
DQA_DEFINE_ERROR(invalid_note, "InvalidNote");
DQA_DEFINE_ERROR(parse_error, "ParseError");
DQA_DEFINE_ERROR(unknown_type_error, "UnknownTypeError");

class annotation_error : public error {
public:
    annotation_error(std::string note_id, std::string reason)
        : error("AnnotationError", "note '" + note_id + "': " + reason),
          note_id_(std::move(note_id)), reason_(std::move(reason)) {}

    [[nodiscard]] const std::string& note_id() const noexcept { return note_id_; }
    [[nodiscard]] const std::string& reason() const noexcept { return reason_; }

private:
    std::string note_id_;
    std::string reason_;
};

// extraction
DQA_DEFINE_ERROR(extractor_unavailable, "ExtractorUnavailable");
DQA_DEFINE_ERROR(extractor_protocol_error, "ExtractorProtocolError");
DQA_DEFINE_ERROR(invalid_pair, "InvalidPair");
DQA_DEFINE_ERROR(invalid_backend, "InvalidBackend");

// qgen
DQA_DEFINE_ERROR(invalid_relation, "InvalidRelation");
DQA_DEFINE_ERROR(generation_error, "GenerationError");
DQA_DEFINE_ERROR(retryable_generation_error, "RetryableGenerationError");
DQA_DEFINE_ERROR(assembly_error, "AssemblyError");

// llmclient
DQA_DEFINE_ERROR(llm_unavailable, "LlmUnavailable");
DQA_DEFINE_ERROR(auth_error, "AuthError");
DQA_DEFINE_ERROR(invalid_request, "InvalidRequest");

class fixture_miss : public error {
public:
    explicit fixture_miss(std::string digest)
        : error("FixtureMiss", "no recorded response for request digest " + digest),
          digest_(std::move(digest)) {}

    [[nodiscard]] const std::string& digest() const noexcept { return digest_; }

private:
    std::string digest_;
};

// verify / dialogue
DQA_DEFINE_ERROR(empty_answer, "EmptyAnswer");
DQA_DEFINE_ERROR(session_config_error, "SessionConfigError");
DQA_DEFINE_ERROR(protocol_error, "ProtocolError");

// eval
DQA_DEFINE_ERROR(cloze_format_error, "ClozeFormatError");
DQA_DEFINE_ERROR(ranking_error, "RankingError");
DQA_DEFINE_ERROR(judge_parse_error, "JudgeParseError");
DQA_DEFINE_ERROR(aggregation_error, "AggregationError");

// service
DQA_DEFINE_ERROR(consistency_error, "ConsistencyError");
DQA_DEFINE_ERROR(storage_error, "StorageError");
DQA_DEFINE_ERROR(not_found, "NotFound");
DQA_DEFINE_ERROR(corrupt_log, "CorruptLog");
DQA_DEFINE_ERROR(config_error, "ConfigError");

#undef DQA_DEFINE_ERROR

}  // namespace dqa
