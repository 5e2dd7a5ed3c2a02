#include "syllab/bench.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "syllab/brandt_corstius.hpp"
#include "syllab/crf.hpp"
#include "syllab/fusion.hpp"
#include "syllab/liang.hpp"

namespace syllab::bench {

namespace {

constexpr std::pair<EngineKind, const char*> kEngineNames[] = {
    {EngineKind::Bc, "bc"},    {EngineKind::Liang, "liang"},      {EngineKind::Crf, "crf"},
    {EngineKind::Nn, "nn"},    {EngineKind::NnPhon, "nn_phon"},   {EngineKind::Fusion, "fusion"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in{std::string(s)};
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

nlohmann::json created_from(const Dataset& train, std::uint64_t seed) {
  return {{"dataset_hash", hex64(train.hash())}, {"seed", seed}};
}

const Word& scored_word(const AnnotatedWord& w, nn::Channel c) { return nn::channel_word(w, c); }

}  // namespace

const char* to_string(EngineKind k) {
  for (const auto& [kind, name] : kEngineNames) {
    if (kind == k) return name;
  }
  return "?";
}

EngineKind engine_from_string(std::string_view s) {
  for (const auto& [kind, name] : kEngineNames) {
    if (s == name) return kind;
  }
  throw Error(ErrorKind::InvalidArgument,
              "unknown engine '" + std::string(s) + "' (expected bc, liang, crf, nn, nn_phon or fusion)");
}

bool trainable(EngineKind k) { return k != EngineKind::Bc; }

std::string hyper_string(const Hyper& h, const std::string& key, const std::string& fallback) {
  const auto it = h.find(key);
  return it == h.end() ? fallback : it->second;
}

int hyper_int(const Hyper& h, const std::string& key, int fallback) {
  const auto it = h.find(key);
  if (it == h.end()) return fallback;
  int v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::InvalidArgument, key + " expects an integer, got '" + s + "'");
  }
  return v;
}

double hyper_double(const Hyper& h, const std::string& key, double fallback) {
  const auto it = h.find(key);
  if (it == h.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::InvalidArgument, key + " expects a number, got '" + it->second + "'");
}

bool hyper_bool(const Hyper& h, const std::string& key, bool fallback) {
  const auto it = h.find(key);
  if (it == h.end()) return fallback;
  const auto& s = it->second;
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw Error(ErrorKind::InvalidArgument, key + " expects true or false, got '" + s + "'");
}

void Curves::write_csv(std::ostream& out) const {
  out << "epoch,ortho_ower,phon_ower,fusion_ower\n";
  const std::size_t rows = std::max({ortho.size(), phon.size(), fusion.size()});
  const auto cell = [&out](const std::vector<double>& col, std::size_t i) {
    if (i < col.size()) out << std::fixed << std::setprecision(3) << round3(col[i]);
  };
  for (std::size_t i = 0; i < rows; ++i) {
    out << i + 1 << ',';
    cell(ortho, i);
    out << ',';
    cell(phon, i);
    out << ',';
    cell(fusion, i);
    out << '\n';
  }
}

bool Engine::accepts(const AnnotatedWord& w) const { return channel() == nn::Channel::Orth || w.has_phonetic(); }

namespace {

class BcEngine : public Engine {
 public:
  explicit BcEngine(bc::Tables tables) : tables_(std::move(tables)) {}
  EngineKind kind() const override { return EngineKind::Bc; }
  std::vector<BoundaryVector> predict(const Dataset& ds) const override {
    std::vector<BoundaryVector> out;
    out.reserve(ds.size());
    for (const auto& e : ds.entries) out.push_back(bc::syllabify(e.orth, tables_));
    return out;
  }
  void save(const std::filesystem::path&) const override {
    throw Error(ErrorKind::InvalidArgument, "the bc engine has no trained state to save");
  }

 private:
  bc::Tables tables_;
};

class LiangEngine : public Engine {
 public:
  LiangEngine(liang::PatternSet ps, std::string levels, nlohmann::json origin)
      : ps_(std::move(ps)), levels_(std::move(levels)), origin_(std::move(origin)) {}
  EngineKind kind() const override { return EngineKind::Liang; }
  std::vector<BoundaryVector> predict(const Dataset& ds) const override {
    std::vector<BoundaryVector> out;
    out.reserve(ds.size());
    for (const auto& e : ds.entries) out.push_back(liang::apply_patterns(e.orth, ps_));
    return out;
  }
  void save(const std::filesystem::path& path) const override { to_model_file().save(path); }

  ModelFile to_model_file() const {
    ModelFile m("liang");
    m.config = {{"levels", levels_}, {"pattern_levels", ps_.levels}};
    if (!origin_.is_null()) m.config["created_from"] = origin_;
    std::vector<std::string> tex;
    for (const auto& p : ps_.patterns()) tex.push_back(p.to_tex());
    m.add_strings("patterns", tex);
    return m;
  }
  static std::unique_ptr<Engine> from_model_file(const ModelFile& m) {
    liang::PatternSet ps;
    for (const auto& t : m.strings("patterns")) ps.insert(liang::Pattern::from_tex(t));
    ps.levels = m.config.value("pattern_levels", 0);
    return std::make_unique<LiangEngine>(std::move(ps), m.config.value("levels", std::string()),
                                         m.config.value("created_from", nlohmann::json()));
  }

 private:
  liang::PatternSet ps_;
  std::string levels_;
  nlohmann::json origin_;
};

class CrfEngine : public Engine {
 public:
  CrfEngine(crf::CrfModel model, nlohmann::json origin) : model_(std::move(model)), origin_(std::move(origin)) {}
  EngineKind kind() const override { return EngineKind::Crf; }
  std::vector<BoundaryVector> predict(const Dataset& ds) const override {
    std::vector<BoundaryVector> out;
    out.reserve(ds.size());
    for (const auto& e : ds.entries) out.push_back(model_.viterbi(e.orth));
    return out;
  }
  void save(const std::filesystem::path& path) const override {
    auto m = model_.to_model_file();
    if (!origin_.is_null()) m.config["created_from"] = origin_;
    m.save(path);
  }

 private:
  crf::CrfModel model_;
  nlohmann::json origin_;
};

class NnEngine : public Engine {
 public:
  NnEngine(nn::NeuralModel model, nlohmann::json origin) : model_(std::move(model)), origin_(std::move(origin)) {}
  EngineKind kind() const override {
    return model_.channel() == nn::Channel::Orth ? EngineKind::Nn : EngineKind::NnPhon;
  }
  nn::Channel channel() const override { return model_.channel(); }
  std::vector<BoundaryVector> predict(const Dataset& ds) const override {
    std::vector<Word> words;
    words.reserve(ds.size());
    for (const auto& e : ds.entries) words.push_back(nn::channel_word(e, model_.channel()));
    return model_.predict(words);
  }
  void save(const std::filesystem::path& path) const override {
    auto m = model_.to_model_file();
    if (!origin_.is_null()) m.config["created_from"] = origin_;
    m.save(path);
  }
  std::optional<std::size_t> max_length() const override {
    return static_cast<std::size_t>(model_.config().token_len);
  }

 private:
  nn::NeuralModel model_;
  nlohmann::json origin_;
};

class FusionEngine : public Engine {
 public:
  FusionEngine(fusion::FusionModel model, nlohmann::json origin)
      : model_(std::move(model)), origin_(std::move(origin)) {}
  EngineKind kind() const override { return EngineKind::Fusion; }
  bool accepts(const AnnotatedWord& w) const override { return w.phon.has_value(); }
  std::vector<BoundaryVector> predict(const Dataset& ds) const override { return model_.predict(ds); }
  void save(const std::filesystem::path& path) const override {
    const auto dir = path.parent_path();
    const std::string stem = path.filename().string();
    const std::string name_a = stem + ".orth", name_b = stem + ".phon";
    auto trunk = [&](const nn::NeuralModel& m, const std::string& name) {
      auto file = m.to_model_file();
      if (!origin_.is_null()) file.config["created_from"] = origin_;
      file.save(dir / name);
    };
    trunk(model_.trunk_a(), name_a);
    trunk(model_.trunk_b(), name_b);
    auto m = model_.to_model_file(dir / name_a, dir / name_b);
    m.config["trunk_a"] = name_a;
    m.config["trunk_b"] = name_b;
    if (!origin_.is_null()) m.config["created_from"] = origin_;
    m.save(path);
  }
  std::optional<std::size_t> max_length() const override {
    return static_cast<std::size_t>(model_.trunk_a().config().token_len);
  }

 private:
  fusion::FusionModel model_;
  nlohmann::json origin_;
};

nn::NeuralConfig neural_config(const Hyper& h, std::uint64_t seed) {
  nn::NeuralConfig c;
  c.token_len = hyper_int(h, "token_len", c.token_len);
  c.window = hyper_int(h, "window", c.window);
  c.embed_dim = hyper_int(h, "embed_dim", c.embed_dim);
  c.conv_filters = hyper_int(h, "conv_filters", c.conv_filters);
  c.conv_kernel = hyper_int(h, "conv_kernel", c.conv_kernel);
  c.pool_kernel = hyper_int(h, "pool_kernel", c.pool_kernel);
  c.dropout_p = hyper_double(h, "dropout", c.dropout_p);
  c.lstm_units = hyper_int(h, "lstm_units", c.lstm_units);
  c.batch_size = hyper_int(h, "batch_size", c.batch_size);
  c.epochs_max = hyper_int(h, "epochs", c.epochs_max);
  c.learning_rate = hyper_double(h, "learning_rate", c.learning_rate);
  c.grad_clip = hyper_double(h, "grad_clip", c.grad_clip);
  c.patience = hyper_int(h, "patience", c.patience);
  c.seed = seed;
  c.validate();
  return c;
}

fusion::FusionConfig fusion_config(const Hyper& h, std::uint64_t seed) {
  fusion::FusionConfig c;
  c.dropout_p = hyper_double(h, "head_dropout", c.dropout_p);
  c.lstm_units = hyper_int(h, "head_lstm_units", c.lstm_units);
  c.combine = fusion::combine_from_string(hyper_string(h, "combine", fusion::to_string(c.combine)));
  c.scaled = hyper_bool(h, "scaled", c.scaled);
  c.epochs_max = hyper_int(h, "head_epochs", c.epochs_max);
  c.batch_size = hyper_int(h, "head_batch_size", hyper_int(h, "batch_size", c.batch_size));
  c.learning_rate = hyper_double(h, "head_learning_rate", hyper_double(h, "learning_rate", c.learning_rate));
  c.grad_clip = hyper_double(h, "grad_clip", c.grad_clip);
  c.patience = hyper_int(h, "head_patience", c.patience);
  c.seed = seed;
  c.validate();
  return c;
}

}  // namespace

std::unique_ptr<Engine> make_bc(const Hyper& h) {
  const auto table = hyper_string(h, "table", "");
  return std::make_unique<BcEngine>(table.empty() ? bc::default_tables() : bc::load_tables(table));
}

std::unique_ptr<Engine> load_engine(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.rfind(ModelFile::kMagic, 0) != 0) {
    return std::make_unique<LiangEngine>(liang::parse_tex(bytes), std::string(), nlohmann::json());
  }
  const auto m = ModelFile::parse(bytes);
  const auto origin = m.config.value("created_from", nlohmann::json());
  if (m.engine == "liang") return LiangEngine::from_model_file(m);
  if (m.engine == "crf") return std::make_unique<CrfEngine>(crf::CrfModel::from_model_file(m), origin);
  if (m.engine == "nn") return std::make_unique<NnEngine>(nn::NeuralModel::from_model_file(m), origin);
  if (m.engine == "fusion") {
    return std::make_unique<FusionEngine>(fusion::FusionModel::from_model_file(m, path.parent_path()), origin);
  }
  throw Error(ErrorKind::Format, "unknown engine tag '" + m.engine + "' in " + path.string());
}

std::unique_ptr<Engine> open_engine(const std::string& spec, const Hyper& h) {
  if (spec == "bc") return make_bc(h);
  return load_engine(spec);
}

std::unique_ptr<Engine> train_engine(EngineKind kind, const Dataset& train, const Hyper& h, std::uint64_t seed,
                                     Curves* curves, const Dataset* val) {
  const auto origin = created_from(train, seed);
  switch (kind) {
    case EngineKind::Bc:
      return make_bc(h);
    case EngineKind::Liang: {
      auto cfg = h.count("levels") ? liang::PatgenConfig::parse(h.at("levels")) : liang::PatgenConfig::defaults();
      if (hyper_bool(h, "tune", false)) {
        auto grid = liang::tuning_grid();
        if (h.count("levels")) grid.insert(grid.begin(), cfg);
        cfg = liang::tune_patgen(train, grid, 0.9, seed);
      }
      auto ps = liang::generate_patterns(train, cfg);
      return std::make_unique<LiangEngine>(std::move(ps), cfg.to_string(), origin);
    }
    case EngineKind::Crf: {
      crf::CrfHyper hy;
      hy.window = hyper_int(h, "window", hy.window);
      hy.l2 = hyper_double(h, "l2", hy.l2);
      hy.max_iterations = hyper_int(h, "max_iterations", hy.max_iterations);
      hy.tolerance = hyper_double(h, "tolerance", hy.tolerance);
      hy.threads = hyper_int(h, "threads", hy.threads);
      auto model = crf::train_crf(train, hy);
      model.seed = seed;
      return std::make_unique<CrfEngine>(std::move(model), origin);
    }
    case EngineKind::Nn:
    case EngineKind::NnPhon:
    case EngineKind::Fusion:
      break;
  }

  Dataset fit = train;
  Dataset held;
  if (val) {
    held = *val;
  } else {
    const double fraction = hyper_double(h, "val_fraction", 0.1);
    if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorKind::InvalidArgument, "val_fraction must be in (0,1)");
    auto parts = split(train, {1.0 - fraction, seed, 1});
    if (!parts[0].train.empty() && !parts[0].test.empty()) {
      fit = std::move(parts[0].train);
      held = std::move(parts[0].test);
    } else {
      held = train;
    }
  }
  const auto ncfg = neural_config(h, seed);
  if (kind != EngineKind::Fusion) {
    const auto channel = kind == EngineKind::Nn ? nn::Channel::Orth : nn::Channel::Phon;
    auto r = nn::train_neural(fit, held, ncfg, channel);
    if (curves) (channel == nn::Channel::Orth ? curves->ortho : curves->phon) = r.val_ower;
    return std::make_unique<NnEngine>(std::move(r.model), origin);
  }
  auto a = nn::train_neural(fit, held, ncfg, nn::Channel::Orth);
  auto b = nn::train_neural(fit, held, ncfg, nn::Channel::Phon);
  auto f = fusion::train_fusion(fit, held, fusion_config(h, seed), a.model, b.model);
  if (curves) {
    curves->ortho = a.val_ower;
    curves->phon = b.val_ower;
    curves->fusion = f.val_ower;
  }
  return std::make_unique<FusionEngine>(std::move(f.model), origin);
}

Evaluation evaluate(const Engine& engine, const Dataset& ds) {
  Dataset subset;
  subset.name = ds.name;
  Evaluation ev;
  for (const auto& e : ds.entries) {
    if (engine.accepts(e)) {
      subset.entries.push_back(e);
    } else {
      ++ev.skipped;
    }
  }
  if (subset.empty()) throw Error(ErrorKind::InvalidArgument, "no entries of '" + ds.name + "' can be scored");
  const auto pred = engine.predict(subset);
  EvalAccumulator acc;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const auto& gold = nn::channel_bounds(subset.entries[i], engine.channel());
    if (pred[i].size() != gold.size()) {
      throw Error(ErrorKind::LengthMismatch, "word '" + to_utf8(scored_word(subset.entries[i], engine.channel())) +
                                                 "': " + std::to_string(pred[i].size()) + " predicted labels for " +
                                                 std::to_string(gold.size()) + " letters");
    }
    acc.add(gold, pred[i]);
  }
  ev.report = acc.report();
  return ev;
}

nlohmann::json report_json(const EvalReport& r) { return to_json(r); }

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::RuleUnknown:
      return kExitUsage;
    case ErrorKind::EmptyTraining:
    case ErrorKind::Divergence:
    case ErrorKind::TrunkMutation:
      return kExitTraining;
    default:
      return kExitData;
  }
}

Plan Plan::parse(std::string_view text, const std::filesystem::path& base_dir) {
  Plan plan;
  enum class Section { None, Plan, Dataset, Engine } section = Section::None;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  const auto fail = [&line_no](const std::string& msg) {
    throw Error(ErrorKind::ParseError, "plan line " + std::to_string(line_no) + ": " + msg);
  };
  std::vector<Hyper> dataset_keys;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto cut = raw.find_first_of("#;");
    const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      std::istringstream header(line.substr(1, line.size() - 2));
      std::string type, name;
      header >> type;
      std::getline(header, name);
      name = trim(name);
      if (type == "plan") {
        section = Section::Plan;
      } else if (type == "dataset") {
        if (name.empty()) fail("dataset section needs a name");
        section = Section::Dataset;
        plan.datasets.push_back({name, {}, std::nullopt});
        dataset_keys.emplace_back();
      } else if (type == "engine") {
        if (name.empty()) fail("engine section needs a kind");
        section = Section::Engine;
        EngineSpec spec;
        spec.label = name;
        try {
          spec.kind = engine_from_string(name.substr(0, name.find(' ')));
        } catch (const Error& e) {
          fail(e.what());
        }
        plan.engines.push_back(std::move(spec));
      } else {
        fail("unknown section '" + type + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("empty key");
    switch (section) {
      case Section::None:
        fail("key outside a section");
        break;
      case Section::Plan:
        if (key != "seed") fail("unknown plan key '" + key + "'");
        try {
          plan.seed = std::stoull(value);
        } catch (const std::exception&) {
          fail("seed expects an integer");
        }
        break;
      case Section::Dataset: {
        static const std::set<std::string> kKeys{"path", "synthetic", "count", "seed", "phonetic", "digraph_rate"};
        if (!kKeys.count(key)) fail("unknown dataset key '" + key + "'");
        dataset_keys.back()[key] = value;
        break;
      }
      case Section::Engine: {
        auto& e = plan.engines.back();
        try {
          if (key == "datasets") {
            e.datasets = split_list(value);
          } else if (key == "folds") {
            e.folds = hyper_int({{key, value}}, key, 1);
          } else if (key == "train_fraction") {
            e.train_fraction = hyper_double({{key, value}}, key, 0.9);
          } else {
            e.hyper[key] = value;
          }
        } catch (const Error& err) {
          fail(err.what());
        }
        break;
      }
    }
  }
  for (std::size_t i = 0; i < plan.datasets.size(); ++i) {
    auto& d = plan.datasets[i];
    const auto& keys = dataset_keys[i];
    try {
      if (keys.count("path")) {
        d.path = keys.at("path");
        if (d.path.is_relative() && !base_dir.empty()) d.path = base_dir / d.path;
      } else if (keys.count("synthetic")) {
        SyntheticSpec s;
        s.rule = keys.at("synthetic");
        s.count = static_cast<std::size_t>(hyper_int(keys, "count", 0));
        s.seed = static_cast<std::uint64_t>(hyper_int(keys, "seed", 0));
        s.phonetic = hyper_bool(keys, "phonetic", false);
        s.digraph_rate = hyper_double(keys, "digraph_rate", s.digraph_rate);
        d.synthetic = s;
      } else {
        throw Error(ErrorKind::ParseError, "dataset '" + d.name + "' needs path or synthetic");
      }
    } catch (const Error& e) {
      throw Error(ErrorKind::ParseError, "dataset '" + d.name + "': " + e.what());
    }
  }
  for (const auto& e : plan.engines) {
    if (e.datasets.empty()) throw Error(ErrorKind::ParseError, "engine '" + e.label + "' lists no datasets");
    if (e.kind == EngineKind::Bc && e.folds != 1) {
      throw Error(ErrorKind::ParseError, "engine '" + e.label + "' needs no training folds");
    }
    if (e.folds < 1) throw Error(ErrorKind::ParseError, "engine '" + e.label + "' needs folds >= 1");
    if (!(e.train_fraction > 0.0 && e.train_fraction < 1.0)) {
      throw Error(ErrorKind::ParseError, "engine '" + e.label + "' needs train_fraction in (0,1)");
    }
    for (const auto& name : e.datasets) {
      const bool known = std::any_of(plan.datasets.begin(), plan.datasets.end(),
                                     [&name](const DatasetSpec& d) { return d.name == name; });
      if (!known) throw Error(ErrorKind::ParseError, "engine '" + e.label + "' uses unknown dataset '" + name + "'");
    }
  }
  return plan;
}

Plan Plan::load(const std::filesystem::path& path) { return parse(read_file_bytes(path), path.parent_path()); }

Dataset load_plan_dataset(const Plan::DatasetSpec& spec) {
  Dataset ds = spec.synthetic ? gen_synthetic(*spec.synthetic) : load_tsv(spec.path);
  ds.name = spec.name;
  return ds;
}

nlohmann::json summary_json(std::span<const EvalReport> folds) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& m : summarize(folds)) {
    nlohmann::json entry = {{"mean", round3(m.mean)}};
    if (m.sd) entry["sd"] = round3(*m.sd);
    out[m.metric] = entry;
  }
  return out;
}

namespace {

std::string file_token(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return s;
}

}  // namespace

nlohmann::json run_plan(const Plan& plan, const std::filesystem::path& curve_dir, std::ostream& log) {
  std::map<std::string, Dataset> data;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& spec : plan.engines) {
    for (const auto& name : spec.datasets) {
      nlohmann::json cell = {{"engine", spec.label}, {"kind", to_string(spec.kind)}, {"dataset", name}};
      nlohmann::json folds = nlohmann::json::array();
      std::vector<EvalReport> reports;
      try {
        if (!data.count(name)) {
          const auto it = std::find_if(plan.datasets.begin(), plan.datasets.end(),
                                       [&name](const Plan::DatasetSpec& d) { return d.name == name; });
          data[name] = load_plan_dataset(*it);
        }
      } catch (const Error& e) {
        cell["error"] = e.what();
        log << spec.label << " on " << name << ": " << e.what() << "\n";
        cells.push_back(cell);
        continue;
      }
      const Dataset& ds = data.at(name);
      if (spec.kind == EngineKind::Bc) {
        try {
          const auto ev = evaluate(*make_bc(spec.hyper), ds);
          folds.push_back({{"fold", 0}, {"report", report_json(ev.report)}, {"skipped", ev.skipped}});
          reports.push_back(ev.report);
        } catch (const Error& e) {
          folds.push_back({{"fold", 0}, {"error", e.what()}});
        }
      } else {
        const auto parts = split(ds, {spec.train_fraction, plan.seed, spec.folds});
        for (int k = 0; k < spec.folds; ++k) {
          const std::uint64_t seed = plan.seed + static_cast<std::uint64_t>(k);
          try {
            Curves curves;
            const auto engine = train_engine(spec.kind, parts[static_cast<std::size_t>(k)].train, spec.hyper, seed,
                                             &curves);
            const auto ev = evaluate(*engine, parts[static_cast<std::size_t>(k)].test);
            folds.push_back({{"fold", k}, {"seed", seed}, {"report", report_json(ev.report)}, {"skipped", ev.skipped}});
            reports.push_back(ev.report);
            if (!curves.empty() && !curve_dir.empty()) {
              std::filesystem::create_directories(curve_dir);
              std::ofstream csv(curve_dir / (file_token(spec.label) + "_" + file_token(name) + "_fold" +
                                             std::to_string(k) + ".csv"));
              curves.write_csv(csv);
            }
            log << spec.label << " on " << name << " fold " << k << ": " << format_report(ev.report) << "\n";
          } catch (const Error& e) {
            folds.push_back({{"fold", k}, {"seed", seed}, {"error", e.what()}});
            log << spec.label << " on " << name << " fold " << k << ": " << e.what() << "\n";
          }
        }
      }
      cell["folds"] = folds;
      if (!reports.empty()) cell["summary"] = summary_json(reports);
      cells.push_back(cell);
    }
  }
  return {{"seed", plan.seed}, {"cells", cells}};
}

namespace {

template <typename F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitData;
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

}  // namespace

int cmd_prepare(const std::filesystem::path& in, const std::filesystem::path& out, std::ostream& log) {
  return guarded(log, [&] {
    const auto raw = read_records(in);
    const auto rep = remove_ambiguous(raw);
    save_tsv(rep.dataset, out);
    std::ostringstream removed;
    for (const auto& w : rep.removed) removed << to_utf8(w) << "\n";
    const auto removed_path = std::filesystem::path(out.string() + ".removed.txt");
    write_text(removed_path, removed.str());
    log << "read " << raw.size() << " entries\n"
        << "merged " << rep.duplicates_merged << " duplicates\n"
        << "removed " << rep.removed.size() << " ambiguous forms (listed in " << removed_path.string() << ")\n"
        << "wrote " << rep.dataset.size() << " words to " << out.string() << "\n";
    return kExitOk;
  });
}

int cmd_train(EngineKind kind, const std::filesystem::path& data, std::uint64_t seed, const Hyper& h,
              double val_fraction, const std::filesystem::path& out, const std::filesystem::path& curves_path,
              std::ostream& log) {
  return guarded(log, [&] {
    if (!trainable(kind)) throw Error(ErrorKind::InvalidArgument, "the bc engine is not trainable");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
      throw Error(ErrorKind::InvalidArgument, "val_fraction must be in [0,1)");
    }
    const auto ds = load_tsv(data);
    Dataset train = ds, val;
    if (val_fraction > 0.0) {
      auto parts = split(ds, {1.0 - val_fraction, seed, 1});
      if (!parts[0].test.empty() && !parts[0].train.empty()) {
        train = std::move(parts[0].train);
        val = std::move(parts[0].test);
      }
    }
    Curves curves;
    const auto engine = train_engine(kind, train, h, seed, &curves, val.empty() ? nullptr : &val);
    engine->save(out);
    if (!curves_path.empty() && !curves.empty()) {
      std::ostringstream csv;
      curves.write_csv(csv);
      write_text(curves_path, csv.str());
    }
    const auto ev = evaluate(*engine, val.empty() ? train : val);
    log << (val.empty() ? "training " : "validation ") << format_report(ev.report) << "\n";
    log << "saved " << to_string(kind) << " model to " << out.string() << "\n";
    return kExitOk;
  });
}

int cmd_eval(const std::string& engine_spec, const std::filesystem::path& data, const std::filesystem::path& json_out,
             std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    const auto engine = open_engine(engine_spec);
    const auto ds = load_tsv(data);
    const auto ev = evaluate(*engine, ds);
    out << format_report(ev.report) << "\n";
    if (ev.skipped) log << "skipped " << ev.skipped << " words without a phonetic form\n";
    nlohmann::json j = {{"engine", to_string(engine->kind())}, {"dataset", ds.name}, {"report", report_json(ev.report)},
                        {"skipped", ev.skipped}};
    if (json_out.empty()) {
      out << j.dump(2) << "\n";
    } else {
      write_text(json_out, j.dump(2) + "\n");
    }
    return kExitOk;
  });
}

int cmd_syllabify(const std::string& engine_spec, const std::vector<std::string>& words, std::istream& in,
                  std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    const auto engine = open_engine(engine_spec);
    std::vector<std::string> lines = words;
    if (lines.empty()) {
      std::string line;
      while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty()) lines.push_back(line);
      }
    }
    const bool paired = engine->kind() == EngineKind::Fusion;
    const auto channel = engine->channel();
    const auto limit = engine->max_length();
    Dataset batch;
    std::vector<std::optional<std::size_t>> slot(lines.size());
    bool failed = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      try {
        AnnotatedWord w;
        if (paired) {
          const auto tab = lines[i].find_first_of("\t ");
          if (tab == std::string::npos) {
            throw Error(ErrorKind::MissingPhonetic, "'" + lines[i] + "' needs a phonetic form after a tab");
          }
          w.orth = normalize(lines[i].substr(0, tab));
          w.phon = from_utf8(trim(lines[i].substr(tab + 1)));
        } else if (channel == nn::Channel::Phon) {
          w.orth = from_utf8(lines[i]);
          w.phon = w.orth;
        } else {
          w.orth = normalize(lines[i]);
        }
        w.orth_bounds = BoundaryVector(w.orth.size());
        if (w.phon) w.phon_bounds = BoundaryVector(w.phon->size());
        const auto& word = nn::channel_word(w, channel);
        if (word.empty()) throw Error(ErrorKind::ParseError, "empty word");
        if (limit && (word.size() > *limit || (w.phon && w.phon->size() > *limit))) {
          throw Error(ErrorKind::WordTooLong, "'" + to_utf8(word) + "' has " + std::to_string(word.size()) +
                                                  " letters; the limit is " + std::to_string(*limit));
        }
        slot[i] = batch.entries.size();
        batch.entries.push_back(std::move(w));
      } catch (const Error& e) {
        failed = true;
        log << "error: " << e.what() << "\n";
      }
    }
    const auto pred = batch.empty() ? std::vector<BoundaryVector>{} : engine->predict(batch);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (!slot[i]) continue;
      const auto& w = batch.entries[*slot[i]];
      out << decode_boundaries_utf8(nn::channel_word(w, channel), pred[*slot[i]]) << "\n";
    }
    return failed ? kExitData : kExitOk;
  });
}

int cmd_patgen(const std::filesystem::path& data, const std::string& levels, bool tune, std::uint64_t seed,
               const std::filesystem::path& out, std::ostream& log) {
  return guarded(log, [&] {
    const auto ds = load_tsv(data);
    auto cfg = levels.empty() ? liang::PatgenConfig::defaults() : liang::PatgenConfig::parse(levels);
    if (tune) {
      auto grid = liang::tuning_grid();
      if (!levels.empty()) grid.insert(grid.begin(), cfg);
      cfg = liang::tune_patgen(ds, grid, 0.9, seed);
      log << "tuned levels: " << cfg.to_string() << "\n";
    }
    std::vector<liang::LevelStats> stats;
    const auto ps = liang::generate_patterns(ds, cfg, &stats);
    for (const auto& s : stats) {
      log << "level " << s.level << ": +" << s.patterns_added << " patterns, missed " << s.fn << ", wrong " << s.fp
          << "\n";
    }
    std::ostringstream tex;
    liang::save_tex(ps, tex);
    write_text(out, tex.str());
    const LiangEngine engine(ps, cfg.to_string(), nlohmann::json());
    log << "training " << format_report(evaluate(engine, ds).report) << "\n";
    log << "wrote " << ps.size() << " patterns to " << out.string() << "\n";
    return kExitOk;
  });
}

int cmd_bench(const std::filesystem::path& plan_path, const std::filesystem::path& out_dir, std::ostream& log) {
  return guarded(log, [&] {
    const auto plan = Plan::load(plan_path);
    const auto report = run_plan(plan, out_dir / "curves", log);
    write_text(out_dir / "report.json", report.dump(2) + "\n");
    bool failed = false;
    for (const auto& cell : report.at("cells")) {
      if (cell.contains("error")) failed = true;
      for (const auto& f : cell.value("folds", nlohmann::json::array())) failed = failed || f.contains("error");
      if (!cell.contains("summary")) continue;
      log << std::left << std::setw(14) << cell.at("engine").get<std::string>() << std::setw(14)
          << cell.at("dataset").get<std::string>();
      for (const char* name : kMetricNames) {
        const auto& s = cell.at("summary").at(name);
        log << " " << name << " " << std::fixed << std::setprecision(3) << s.at("mean").get<double>();
        if (s.contains("sd")) log << " ± " << s.at("sd").get<double>();
      }
      log << "\n";
    }
    log << "report written to " << (out_dir / "report.json").string() << "\n";
    return failed ? kExitTraining : kExitOk;
  });
}

}  // namespace syllab::bench
