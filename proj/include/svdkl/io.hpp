#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "svdkl/corpus.hpp"
#include "svdkl/model.hpp"
#include "svdkl/trainer.hpp"
#include "svdkl/vc_pipeline.hpp"

namespace svdkl::io {

using nlohmann::json;

inline constexpr int kUtteranceVersion = 1;
inline constexpr int kCheckpointVersion = 1;
inline constexpr int kCorpusVersion = 1;

/// Parses JSON text, mapping syntax errors to DataError with a line number.
json parse_document(const std::string& text, const std::string& origin);
json read_document(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

json utterance_to_json(const vc::Utterance& u);
vc::Utterance utterance_from_json(const json& doc);
vc::Utterance load_utterance(const std::filesystem::path& path);
void save_utterance(const vc::Utterance& u, const std::filesystem::path& path);

json checkpoint_to_json(const SvdklModel& model, const std::optional<TrainConfig>& cfg = std::nullopt);
SvdklModel checkpoint_from_json(const json& doc);
void save_checkpoint(const SvdklModel& model, const std::filesystem::path& path,
                     const std::optional<TrainConfig>& cfg = std::nullopt);
SvdklModel load_checkpoint(const std::filesystem::path& path);

json corpus_to_json(const AlignedCorpus& corpus);
AlignedCorpus corpus_from_json(const json& doc);
void save_corpus(const AlignedCorpus& corpus, const std::filesystem::path& path);
AlignedCorpus load_corpus(const std::filesystem::path& path);

/// Missing keys keep their defaults; unknown keys are rejected.
json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const json& doc);
TrainConfig load_config(const std::filesystem::path& path);

/// Shortest round-trip decimal; always contains a '.' or exponent.
std::string format_decimal(double value);

}  // namespace svdkl::io
