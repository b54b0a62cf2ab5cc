// study plan|export|analyze, serve.

#include <pthread.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "common.hpp"
#include "tdce/common/csv.hpp"
#include "tdce/common/error.hpp"
#include "tdce/mrmc/glmm.hpp"
#include "tdce/mrmc/kappa.hpp"
#include "tdce/study/http.hpp"
#include "tdce/study/store.hpp"

namespace tdce::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads a headed CSV, checking the header. Rows come back without it.
std::vector<std::vector<std::string>> read_table(const fs::path& path, const std::vector<std::string>& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::vector<std::string> row;
  if (!csv::read_record(in, row) || row != header)
    throw ValidationError(path.string() + ": line 1: expected header " + csv::join(header));
  std::vector<std::vector<std::string>> rows;
  std::size_t line = 1;
  while (csv::read_record(in, row)) {
    ++line;
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != header.size())
      throw ValidationError(path.string() + ": line " + std::to_string(line) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(row.size()));
    rows.push_back(row);
  }
  return rows;
}

std::vector<mrmc::Reader> read_readers(const fs::path& path) {
  std::vector<mrmc::Reader> out;
  std::size_t line = 1;
  for (const auto& r : read_table(path, {"reader_id", "tier"})) {
    ++line;
    try {
      out.push_back({r[0], mrmc::parse_tier(r[1])});
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line) + ": field tier: " + e.what());
    }
  }
  return out;
}

// Rows of one case_id are grouped into one case, in first-appearance order.
std::vector<mrmc::StudyCase> read_cases(const fs::path& path) {
  std::vector<mrmc::StudyCase> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : read_table(path, {"case_id", "view", "grayscale", "tdce"})) {
    auto [it, fresh] = index.emplace(r[0], out.size());
    if (fresh) out.push_back({r[0], {}});
    out[it->second].views.push_back({r[1], r[2], r[3]});
  }
  return out;
}

json kappa_json(const std::map<mrmc::Condition, mrmc::KappaResult>& k) {
  json j = json::object();
  for (const auto& [cond, r] : k)
    j[mrmc::to_string(cond)] = {{"kappa", r.defined ? json(r.kappa) : json(nullptr)},
                                {"p_bar", r.p_bar},
                                {"p_e", r.p_e},
                                {"cases", r.cases},
                                {"raters", r.raters},
                                {"defined", r.defined}};
  return j;
}

std::string reader_table_csv(const mrmc::ReaderTable& t) {
  std::ostringstream out;
  out << "reader_id,tier,condition,tp,fp,tn,fn,accuracy,sensitivity,specificity\n";
  auto num = [](double v) { return std::isfinite(v) ? csv::format_double(v) : std::string(); };
  for (const auto& [key, c] : t.per_reader) {
    const auto tier = t.tiers.find(key.first);
    out << csv::join({key.first, tier == t.tiers.end() ? "" : mrmc::to_string(tier->second),
                      mrmc::to_string(key.second), std::to_string(c.tp), std::to_string(c.fp), std::to_string(c.tn),
                      std::to_string(c.fn), num(c.accuracy), num(c.sensitivity), num(c.specificity)})
        << '\n';
  }
  return out.str();
}

void add_plan(CLI::App& study, Commands& out) {
  struct Args {
    Global g;
    std::string readers, cases, study_id = "study";
    int washout_days = 28;
  };
  auto a = std::make_shared<Args>();
  auto* sub = study.add_subcommand("plan", "Latin-square reading plan from reader and case lists");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, true);
  o->add("--readers", a->readers, "CSV reader_id,tier", true);
  o->add("--cases", a->cases, "CSV case_id,view,grayscale,tdce (e.g. from `encode`)", true);
  o->add("--study-id", a->study_id, "study identifier");
  o->add("--washout-days", a->washout_days, "days between sessions")->check(CLI::NonNegativeNumber);
  out.push_back({sub, o, [a] {
                   RunRecord rec("study plan", a->g);
                   const auto readers = read_readers(a->readers);
                   const auto cases = read_cases(a->cases);
                   rec.input(a->readers);
                   rec.input(a->cases);
                   auto plan = mrmc::build_plan(readers, cases, *a->g.seed, a->washout_days);
                   plan.study_id = a->study_id;
                   mrmc::validate(plan);
                   const fs::path p = rec.out_dir() / "plan.json";
                   mrmc::write_plan(plan, p);
                   rec.output(p);
                   rec.param("study_id", a->study_id);
                   rec.param("washout_days", a->washout_days);
                   rec.write();
                   std::cout << "study plan: " << readers.size() << " readers, " << cases.size() << " cases -> "
                             << p.string() << "\n";
                   return 0;
                 }});
}

void add_export(CLI::App& study, Commands& out) {
  struct Args {
    Global g;
    std::string store, study;
  };
  auto a = std::make_shared<Args>();
  auto* sub = study.add_subcommand("export", "ratings CSV from a study store (read-only replay)");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, false);
  o->add("--store", a->store, "study store directory", true);
  o->add("--study", a->study, "study id", true);
  out.push_back({sub, o, [a] {
                   RunRecord rec("study export", a->g);
                   const fs::path log = fs::path(a->store) / study::kEventLogName;
                   if (!fs::exists(log)) throw ValidationError("no event log at " + log.string());
                   const auto contents = study::read_log(log);
                   if (contents.torn_tail)
                     std::cerr << "warning: torn final record ignored (the service truncates it on start)\n";
                   const auto state = study::replay(contents.events);
                   const auto* st = state.find(a->study);
                   if (!st) throw ValidationError("unknown study '" + a->study + "' in " + a->store);
                   const fs::path p = rec.out_dir() / "ratings.csv";
                   write_text(p, mrmc::ratings_csv(st->ratings));
                   rec.output(p);
                   rec.param("study", a->study);
                   rec.param("events", contents.events.size());
                   rec.write();
                   std::cout << "study export: " << st->ratings.size() << " ratings -> " << p.string() << "\n";
                   return 0;
                 }});
}

void add_analyze(CLI::App& study, Commands& out) {
  struct Args {
    Global g;
    std::string ratings, reference, plan, readers, calls = "binary";
  };
  auto a = std::make_shared<Args>();
  auto* sub = study.add_subcommand("analyze", "reader table, Fleiss' kappa, GLMM and reading time");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, false);
  o->add("--ratings", a->ratings, "ratings CSV", true);
  o->add("--reference", a->reference, "CSV case_id,label", true);
  o->add("--plan", a->plan, "plan JSON (reader tiers)");
  o->add("--readers", a->readers, "CSV reader_id,tier (instead of --plan)");
  o->add("--calls", a->calls, "binary | birads: which call is scored")->check(CLI::IsMember({"binary", "birads"}));
  out.push_back({sub, o, [a] {
                   if (a->plan.empty() == a->readers.empty())
                     throw ValidationError("study analyze: give exactly one of --plan and --readers");
                   RunRecord rec("study analyze", a->g);
                   const auto ratings = mrmc::read_ratings_csv(a->ratings);
                   const auto reference = mrmc::read_reference_csv(a->reference);
                   rec.input(a->ratings);
                   rec.input(a->reference);
                   std::map<std::string, mrmc::Tier> tiers;
                   if (!a->plan.empty()) {
                     for (const auto& r : mrmc::read_plan(a->plan).readers) tiers[r.reader_id] = r.tier;
                     rec.input(a->plan);
                   } else {
                     for (const auto& r : read_readers(a->readers)) tiers[r.reader_id] = r.tier;
                     rec.input(a->readers);
                   }
                   // Cases listed in the reference file without a usable label.
                   std::vector<std::string> excluded;
                   {
                     std::ifstream in(a->reference, std::ios::binary);
                     std::vector<std::string> row;
                     csv::read_record(in, row);
                     while (csv::read_record(in, row))
                       if (!row.empty() && !row[0].empty() && !reference.count(row[0])) excluded.push_back(row[0]);
                   }
                   const auto source = a->calls == "binary" ? mrmc::CallSource::binary : mrmc::CallSource::birads;
                   const auto table = mrmc::reader_table(ratings, reference, tiers, source, excluded);

                   json glmm = json::object();
                   for (auto subset : {mrmc::GlmmSubset::all, mrmc::GlmmSubset::reference_positive,
                                       mrmc::GlmmSubset::reference_negative}) {
                     try {
                       const auto data = mrmc::glmm_data_from_ratings(ratings, reference, subset, source);
                       glmm[mrmc::to_string(subset)] = mrmc::to_json(mrmc::glmm_fit(data));
                     } catch (const ValidationError& e) {
                       glmm[mrmc::to_string(subset)] = {{"error", e.what()}};
                     }
                   }
                   json times = json::array();
                   std::map<mrmc::Condition, std::pair<double, int>> per_cond;
                   for (const auto& [key, secs] : mrmc::reading_time(ratings)) {
                     times.push_back({{"reader_id", key.first},
                                      {"condition", mrmc::to_string(key.second)},
                                      {"total_seconds", secs}});
                     per_cond[key.second].first += secs;
                     ++per_cond[key.second].second;
                   }
                   json mean_time = json::object();
                   for (const auto& [cond, v] : per_cond) mean_time[mrmc::to_string(cond)] = v.first / v.second;

                   const json report{{"calls", a->calls},
                                     {"reader_table", mrmc::to_json(table)},
                                     {"kappa_binary", kappa_json(mrmc::kappa_by_condition(ratings, false))},
                                     {"kappa_birads", kappa_json(mrmc::kappa_by_condition(ratings, true))},
                                     {"glmm", glmm},
                                     {"reading_time", {{"per_reader", times}, {"mean_per_reader", mean_time}}}};
                   const fs::path rp = rec.out_dir() / "analysis.json";
                   const fs::path tp = rec.out_dir() / "reader_table.csv";
                   write_json(rp, report);
                   write_text(tp, reader_table_csv(table));
                   rec.output(rp);
                   rec.output(tp);
                   rec.param("calls", a->calls);
                   rec.write();

                   std::printf("%-14s %-10s %-10s %-10s\n", "condition", "accuracy", "sens", "spec");
                   for (const auto& [cond, c] : table.by_condition)
                     std::printf("%-14s %-10.4f %-10.4f %-10.4f\n", mrmc::to_string(cond).c_str(), c.accuracy,
                                 c.sensitivity, c.specificity);
                   for (const auto& [cond, k] : mrmc::kappa_by_condition(ratings, false))
                     std::printf("kappa %-14s %s\n", mrmc::to_string(cond).c_str(),
                                 k.defined ? std::to_string(k.kappa).c_str() : "undefined");
                   return 0;
                 }});
}

void add_serve(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    std::string store, host = "127.0.0.1", image_root, tokens, plan;
    int port = 8080;
    std::optional<int> washout_days;
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("serve", "run the reader-study HTTP service");
  auto o = std::make_shared<Options>(sub);
  o->add("--store", a->store, "study store directory (event log + snapshot)", true);
  o->add("--host", a->host, "bind address");
  o->add("--port", a->port, "bind port (0: any free port)")->check(CLI::Range(0, 65535));
  o->add("--image-root", a->image_root, "directory the plan's image paths resolve against", true);
  o->add("--tokens", a->tokens, std::string("bearer token file (default: $") + study::kTokenFileEnv + ")");
  o->add("--plan", a->plan, "create this study at startup unless the store already has it");
  sub->add_option("--washout-days", a->washout_days, "override the plan's washout (demos only)")
      ->check(CLI::NonNegativeNumber);
  out.push_back({sub, o, [a] {
                   std::string token_file = a->tokens;
                   if (token_file.empty())
                     if (const char* env = std::getenv(study::kTokenFileEnv)) token_file = env;
                   study::ServerOptions sopt;
                   sopt.image_root = a->image_root;
                   if (!token_file.empty()) sopt.tokens = study::read_tokens(token_file);
                   if (!fs::is_directory(a->image_root))
                     throw ValidationError("--image-root is not a directory: " + a->image_root);

                   // Signals go to the sigwait below, not to the server threads.
                   sigset_t set;
                   sigemptyset(&set);
                   sigaddset(&set, SIGINT);
                   sigaddset(&set, SIGTERM);
                   pthread_sigmask(SIG_BLOCK, &set, nullptr);

                   fs::create_directories(a->store);
                   study::ServiceOptions opt;
                   opt.store_dir = a->store;
                   opt.washout_days = a->washout_days;
                   study::StudyService service(opt);
                   for (const auto& w : service.recovery_warnings()) std::cerr << "recovery: " << w << "\n";
                   if (!a->plan.empty()) {
                     const json plan = read_json(a->plan);
                     const std::string id = plan.value("study_id", "");
                     if (service.state()->find(id)) std::cout << "study '" << id << "' already in the store\n";
                     else service.create_study(plan);
                   }
                   study::StudyServer server(service, sopt);
                   const int port = server.bind(a->host, a->port);
                   std::cout << "serving on http://" << a->host << ":" << port
                             << (sopt.tokens ? " (bearer tokens)" : " (no auth)") << std::endl;
                   std::thread th([&] { server.run(); });
                   int sig = 0;
                   sigwait(&set, &sig);
                   std::cout << "shutting down (signal " << sig << ")" << std::endl;
                   server.stop();
                   th.join();
                   return 0;
                 }});
}

}  // namespace

void register_study_commands(CLI::App& app, Commands& out) {
  auto* study = app.add_subcommand("study", "observer-study planning, export and analysis");
  study->require_subcommand(1);
  add_plan(*study, out);
  add_export(*study, out);
  add_analyze(*study, out);
  add_serve(app, out);
}

}  // namespace tdce::cli
