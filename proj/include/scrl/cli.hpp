#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "scrl/config.hpp"
#include "scrl/data_io.hpp"
#include "scrl/errors.hpp"
#include "scrl/retrieval.hpp"
#include "scrl/trainer.hpp"

namespace scrl::cli {

// Bad command line: unknown command or flag, missing required flag,
// unparsable value, or a config that fails validation.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct SynthCommand {
  std::filesystem::path out;
  SynthSpec spec;
  std::optional<double> test_fraction;  // also writes train.tsv and test.tsv
};

struct TrainCommand {
  std::filesystem::path manifest;
  std::filesystem::path out;
  TrainConfig config;
  std::optional<std::filesystem::path> resume;
  std::optional<std::size_t> resume_epochs;  // epochs override on resume
  std::optional<std::size_t> stop_after_epoch;
  std::optional<std::filesystem::path> history;
};

struct EmbedCommand {
  std::filesystem::path ckpt;
  std::filesystem::path manifest;
  std::filesystem::path out;  // directory: image.scrlt, voice.scrlt, index.tsv
};

struct EvalCommand {
  std::optional<std::filesystem::path> ckpt;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> embeddings;  // an embed output directory
  std::vector<Protocol> protocols;
  std::vector<std::size_t> ks;
  std::optional<std::filesystem::path> metrics;  // CSV; stdout when absent
  std::optional<std::filesystem::path> curve;
  std::optional<std::filesystem::path> summary;
};

struct MfccCommand {
  std::filesystem::path wav;
  std::filesystem::path out;
  std::size_t frames = 2000;
};

struct SweepCommand {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path out;
  TrainConfig config;
  std::vector<double> eta1;
  std::vector<double> eta2;
};

struct Command {
  std::variant<SynthCommand, TrainCommand, EmbedCommand, EvalCommand, MfccCommand, SweepCommand>
      action;
  bool deterministic = true;
};

// args excludes the program name. SCRL_SEED, when set, seeds configs that
// name no seed in the file or on the command line. Throws UsageError.
Command parse_args(const std::vector<std::string>& args);

// Executes a parsed command. Outputs go only to the named paths and are
// removed again when the command fails.
void execute(const Command& cmd, std::ostream& out, std::ostream& err);

// parse_args + execute with every failure mapped to an exit code and a
// diagnostic on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Curve file for one protocol when several are evaluated: stem.i2v.csv.
std::filesystem::path curve_path(const std::filesystem::path& base, Protocol p, bool several);

}  // namespace scrl::cli
