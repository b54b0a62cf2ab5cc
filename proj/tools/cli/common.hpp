#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tdce::cli {

// Options shared by every command.
struct Global {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string output_dir = "out";
  std::string config;
  bool deterministic = false;
};

// Registers flags on a subcommand and, after parsing, fills the ones not
// given on the command line from a JSON config document. Config keys are the
// long flag names with dashes turned into underscores.
class Options {
 public:
  explicit Options(CLI::App* app);

  template <class T>
  CLI::Option* add(const std::string& flag, T& var, const std::string& desc, bool required = false) {
    CLI::Option* opt = app_->add_option(flag, var, desc);
    entries_.push_back({key_of(flag), opt, [&var](const nlohmann::json& j) { var = j.get<T>(); }, required});
    return opt;
  }
  CLI::Option* flag(const std::string& flag, bool& var, const std::string& desc);

  // Seed, threads, output dir, config, deterministic.
  void add_global(Global& g, bool seed_required);

  // Applies the config file (if any), then checks required options.
  void finalize();

  CLI::App* app() const { return app_; }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<void(const nlohmann::json&)> set;
    bool required;
  };
  static std::string key_of(const std::string& flag);

  CLI::App* app_;
  std::vector<Entry> entries_;
  Global* global_ = nullptr;
  bool seed_required_ = false;
};

// Run manifest written next to a command's outputs.
class RunRecord {
 public:
  RunRecord(std::string command, const Global& g);
  void input(const std::filesystem::path& p);
  void output(const std::filesystem::path& p);
  void param(const std::string& key, nlohmann::json value);
  std::filesystem::path out_dir() const { return out_; }
  // Writes <output_dir>/run_manifest.json.
  void write();

 private:
  std::string command_;
  Global global_;
  std::filesystem::path out_;
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
  nlohmann::json params_ = nlohmann::json::object();
  std::int64_t started_ms_;
};

void write_text(const std::filesystem::path& p, const std::string& text);
void write_json(const std::filesystem::path& p, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& p);

std::uint64_t require_seed(const Global& g, const std::string& command);

// File-name stems: "<patient>_<study>_<lat>_<view>" for images and
// "<patient>_<study>_<lat>" for breast-level study cases.
std::string image_stem(const std::string& patient, const std::string& study, const std::string& lat,
                       const std::string& view);
std::string breast_case_id(const std::string& patient, const std::string& study, const std::string& lat);

// A parsed subcommand runs `run`, which returns the exit code.
struct Command {
  CLI::App* sub;
  std::shared_ptr<Options> options;
  std::function<int()> run;
};
using Commands = std::vector<Command>;

// Registration hooks, one per command group.
void register_data_commands(CLI::App& app, Commands& out);
void register_model_commands(CLI::App& app, Commands& out);
void register_eval_commands(CLI::App& app, Commands& out);
void register_study_commands(CLI::App& app, Commands& out);
void register_selftest_command(CLI::App& app, Commands& out);

inline constexpr const char* kToolVersion = "1.0.0";

}  // namespace tdce::cli
