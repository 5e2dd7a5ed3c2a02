#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "syllab/core.hpp"
#include "syllab/corpus.hpp"
#include "syllab/error.hpp"
#include "syllab/metrics.hpp"
#include "syllab/model_file.hpp"
#include "syllab/neural.hpp"

namespace syllab::bench {

enum class EngineKind { Bc, Liang, Crf, Nn, NnPhon, Fusion };

const char* to_string(EngineKind k);
/// Throws InvalidArgument.
EngineKind engine_from_string(std::string_view s);
bool trainable(EngineKind k);

/// Flat key/value hyperparameters as read from a plan section or the
/// command line.
using Hyper = std::map<std::string, std::string>;

/// Typed lookups with defaults; malformed values throw InvalidArgument.
std::string hyper_string(const Hyper& h, const std::string& key, const std::string& fallback);
int hyper_int(const Hyper& h, const std::string& key, int fallback);
double hyper_double(const Hyper& h, const std::string& key, double fallback);
bool hyper_bool(const Hyper& h, const std::string& key, bool fallback);

/// Validation OWER per epoch; a column stays empty when it does not apply.
struct Curves {
  std::vector<double> ortho;
  std::vector<double> phon;
  std::vector<double> fusion;

  bool empty() const noexcept { return ortho.empty() && phon.empty() && fusion.empty(); }
  /// Header "epoch,ortho_ower,phon_ower,fusion_ower".
  void write_csv(std::ostream& out) const;
};

class Engine {
 public:
  virtual ~Engine() = default;
  virtual EngineKind kind() const = 0;
  /// The channel whose boundaries are predicted and scored.
  virtual nn::Channel channel() const { return nn::Channel::Orth; }
  /// Entries the engine can score; fusion skips words without phonetics.
  virtual bool accepts(const AnnotatedWord& w) const;
  /// One boundary vector per entry of `ds`, in order.
  virtual std::vector<BoundaryVector> predict(const Dataset& ds) const = 0;
  /// Writes the model file; fusion also writes its two trunk files next to
  /// it. bc has nothing to save and throws InvalidArgument.
  virtual void save(const std::filesystem::path& path) const = 0;
  /// Longest word the engine accepts, if limited.
  virtual std::optional<std::size_t> max_length() const { return std::nullopt; }
};

/// Rule engine from the default table or a table file (hyper "table").
std::unique_ptr<Engine> make_bc(const Hyper& h = {});

/// Reads a model file or, for Liang, a TeX pattern file.
std::unique_ptr<Engine> load_engine(const std::filesystem::path& path);

/// Either "bc" or a path to a saved model.
std::unique_ptr<Engine> open_engine(const std::string& spec, const Hyper& h = {});

/// Neural engines pick their best epoch on `val`, or on a slice carved out
/// of `train` (hyper "val_fraction", default 0.1) when `val` is null. `seed`
/// drives every random choice. Model files carry the dataset hash and seed
/// they were built from.
std::unique_ptr<Engine> train_engine(EngineKind kind, const Dataset& train, const Hyper& h, std::uint64_t seed,
                                     Curves* curves = nullptr, const Dataset* val = nullptr);

struct Evaluation {
  EvalReport report;
  std::size_t skipped = 0;
};

/// Scores the engine on every entry it accepts. A prediction of the wrong
/// length throws LengthMismatch naming the word.
Evaluation evaluate(const Engine& engine, const Dataset& ds);

nlohmann::json report_json(const EvalReport& r);

/// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitTraining = 3;

int exit_code(ErrorKind kind);

struct Plan {
  struct DatasetSpec {
    std::string name;
    std::filesystem::path path;
    std::optional<SyntheticSpec> synthetic;
  };
  struct EngineSpec {
    /// Section title, e.g. "crf" or "crf small".
    std::string label;
    EngineKind kind = EngineKind::Crf;
    std::vector<std::string> datasets;
    int folds = 1;
    double train_fraction = 0.9;
    Hyper hyper;
  };

  std::uint64_t seed = 1;
  std::vector<DatasetSpec> datasets;
  std::vector<EngineSpec> engines;

  /// Sections "[plan]", "[dataset NAME]" and "[engine KIND [LABEL]]" holding
  /// "key = value" lines; '#' and ';' start comments. Relative dataset paths
  /// resolve against base_dir. Throws ParseError.
  static Plan parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static Plan load(const std::filesystem::path& path);
};

Dataset load_plan_dataset(const Plan::DatasetSpec& spec);

/// Runs every (engine, dataset) cell over its folds and returns the report.
/// Fold k uses split seed and training seed plan.seed + k. Cells that fail
/// record the message and the run continues. Curves for neural engines go to
/// curve_dir when it is not empty.
nlohmann::json run_plan(const Plan& plan, const std::filesystem::path& curve_dir, std::ostream& log);

/// Mean and sample sd per metric recomputed from the "folds" entries of a
/// report cell.
nlohmann::json summary_json(std::span<const EvalReport> folds);

int cmd_prepare(const std::filesystem::path& in, const std::filesystem::path& out, std::ostream& log);
int cmd_train(EngineKind kind, const std::filesystem::path& data, std::uint64_t seed, const Hyper& h,
              double val_fraction, const std::filesystem::path& out, const std::filesystem::path& curves,
              std::ostream& log);
int cmd_eval(const std::string& engine, const std::filesystem::path& data, const std::filesystem::path& json_out,
             std::ostream& out, std::ostream& log);
/// Words come from `words` or, when it is empty, from `in`, one per line.
/// Fusion lines carry "orth<TAB>phon".
int cmd_syllabify(const std::string& engine, const std::vector<std::string>& words, std::istream& in,
                  std::ostream& out, std::ostream& log);
int cmd_patgen(const std::filesystem::path& data, const std::string& levels, bool tune, std::uint64_t seed,
               const std::filesystem::path& out, std::ostream& log);
int cmd_bench(const std::filesystem::path& plan, const std::filesystem::path& out_dir, std::ostream& log);

}  // namespace syllab::bench
