#include "common.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "tdce/common/error.hpp"
#include "tdce/common/hash.hpp"

namespace tdce::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string iso(std::int64_t ms) {
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

Options::Options(CLI::App* app) : app_(app) {}

std::string Options::key_of(const std::string& flag) {
  // "-o,--output-dir" -> "output_dir"
  std::string name = flag;
  const auto pos = name.rfind("--");
  if (pos != std::string::npos) name = name.substr(pos + 2);
  for (auto& ch : name)
    if (ch == '-') ch = '_';
  return name;
}

CLI::Option* Options::flag(const std::string& flag, bool& var, const std::string& desc) {
  CLI::Option* opt = app_->add_flag(flag, var, desc);
  entries_.push_back({key_of(flag), opt, [&var](const json& j) { var = j.get<bool>(); }, false});
  return opt;
}

void Options::add_global(Global& g, bool seed_required) {
  global_ = &g;
  seed_required_ = seed_required;
  CLI::Option* seed = app_->add_option("--seed", g.seed, seed_required ? "master seed (required)" : "master seed");
  entries_.push_back({"seed", seed, [&g](const json& j) { g.seed = j.get<std::uint64_t>(); }, false});
  add("--threads", g.threads, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  add("-o,--output-dir", g.output_dir, "directory receiving every output");
  app_->add_option("--config", g.config, "JSON document of option values; flags override it");
  flag("--deterministic", g.deterministic, "omit timestamps from the run manifest");
}

void Options::finalize() {
  std::set<std::string> from_config;
  if (global_ && !global_->config.empty()) {
    const json doc = read_json(global_->config);
    if (!doc.is_object()) throw ValidationError("config " + global_->config + ": expected a JSON object");
    for (const auto& [key, value] : doc.items()) {
      auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
      if (it == entries_.end()) throw ValidationError("config " + global_->config + ": unknown key '" + key + "'");
      if (it->opt->count() > 0) continue;  // flag wins
      try {
        it->set(value);
      } catch (const json::exception& e) {
        throw ValidationError("config " + global_->config + ": key '" + key + "': " + e.what());
      }
      from_config.insert(key);
    }
  }
  for (const auto& e : entries_)
    if (e.required && e.opt->count() == 0 && !from_config.count(e.key))
      throw ValidationError(app_->get_name() + ": missing required option --" + e.opt->get_name(false, true));
  if (global_ && seed_required_ && !global_->seed)
    throw ValidationError(app_->get_name() + ": --seed is required (stochastic command)");
}

RunRecord::RunRecord(std::string command, const Global& g)
    : command_(std::move(command)), global_(g), out_(g.output_dir), started_ms_(now_ms()) {
  fs::create_directories(out_);
}

void RunRecord::input(const fs::path& p) {
  inputs_.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
}

void RunRecord::output(const fs::path& p) {
  outputs_.push_back({{"path", p.lexically_relative(out_).generic_string()}, {"sha256", sha256_file(p)}});
}

void RunRecord::param(const std::string& key, json value) { params_[key] = std::move(value); }

void RunRecord::write() {
  json j;
  j["command"] = command_;
  j["versions"] = {{"tdce", kToolVersion},
                   {"compiler", __VERSION__},
                   {"cplusplus", __cplusplus},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"cli11", CLI11_VERSION}};
  j["seed"] = global_.seed ? json(*global_.seed) : json(nullptr);
  j["threads"] = global_.threads;
  j["params"] = params_;
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  if (!global_.deterministic) {
    j["started_at"] = iso(started_ms_);
    j["finished_at"] = iso(now_ms());
  }
  write_json(out_ / "run_manifest.json", j);
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + p.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed: " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

std::uint64_t require_seed(const Global& g, const std::string& command) {
  if (!g.seed) throw ValidationError(command + ": --seed is required");
  return *g.seed;
}

std::string image_stem(const std::string& patient, const std::string& study, const std::string& lat,
                       const std::string& view) {
  return breast_case_id(patient, study, lat) + "_" + view;
}

std::string breast_case_id(const std::string& patient, const std::string& study, const std::string& lat) {
  return patient + "_" + study + "_" + lat;
}

}  // namespace tdce::cli
