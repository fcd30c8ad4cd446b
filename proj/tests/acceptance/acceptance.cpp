// Acceptance runner: one PASS/FAIL line per criterion. A criterion passes
// when every property of its suite passes within the criterion's time limit.
//   langsplit_acceptance [--only N]... [--workers W]

#include "langsplit/io.hpp"
#include "langsplit/verify.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace langsplit;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> failures;
};

struct Criterion {
  int id;
  std::string title;
  double limit_seconds;  // 0: no limit
  std::function<Outcome()> run;
};

Outcome from_suite(const std::string& suite, int workers) {
  SuiteOptions opts;
  opts.workers = workers;
  Outcome out;
  for (const PropertyResult& r : run_suite(suite, opts)) {
    if (!r.pass) {
      out.pass = false;
      out.failures.push_back(r.name + " (" + r.detail + ")");
    }
  }
  return out;
}

// ---- criterion 10: every CLI command, run twice with different worker counts

int shell(const std::string& cmd) {
  const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string shell_quote(const fs::path& p) { return "'" + p.string() + "'"; }

/// Compares two directories file by file; returns a description of the first
/// difference, or an empty string.
std::string compare_dirs(const fs::path& a, const fs::path& b) {
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::recursive_directory_iterator(a)) names_a.insert(fs::relative(e.path(), a).string());
  for (const auto& e : fs::recursive_directory_iterator(b)) names_b.insert(fs::relative(e.path(), b).string());
  if (names_a != names_b) return "file sets differ";
  for (const std::string& n : names_a) {
    if (fs::is_directory(a / n)) continue;
    if (read_text_file(a / n) != read_text_file(b / n)) return n + " differs";
  }
  return {};
}

Outcome cli_determinism(const fs::path& root) {
  const std::string cli = LANGSPLIT_CLI_PATH;
  fs::remove_all(root);
  fs::create_directories(root);
  // Reduced sizes: the code paths are those of the defaults.
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"convert", "convert --from vp --alpha 0.3 --state 0.5,-1 --to rf"},
      {"convert-prediction", "convert --from ve --sigma 2 --state 1 --kind noise --value 0.5 --to-kind velocity"},
      {"sample-forward", "sample-forward --seed 7 --emit-gnuplot"},
      {"sample-forward-ve", "sample-forward --param ve --grid clock --chains 500 --seed 7"},
      {"sample-reverse", "sample-reverse --chains 4000 --seed 7 --emit-gnuplot"},
      {"sample-reverse-rf", "sample-reverse --model-type rf --grid karras --chains 2000 --steps 100 --seed 7"},
      {"sample-reverse-ode", "sample-reverse --model-type vp-ode --integrator heun --chains 2000 --steps 100 --seed 7"},
      {"langevin", "langevin --chains 4000 --steps 3000 --seed 7 --emit-gnuplot"},
      {"train", "train --steps 200 --batch-size 128 --seed 7 --emit-gnuplot"},
      {"fp-solve", "fp-solve --cells 120 --emit-gnuplot"},
      {"verify", "verify --quick --suite core --suite conversions --suite oracle --seed 7"},
  };
  Outcome out;
  for (const auto& [name, args] : commands) {
    for (int workers : {1, 3}) {
      const fs::path dir = root / (name + "-w" + std::to_string(workers));
      std::string cmd =
          shell_quote(cli) + " " + args + " --workers " + std::to_string(workers) + " --out " + shell_quote(dir);
      if (workers == 3) cmd = "cd " + shell_quote(root) + " && " + cmd;  // the working directory must not matter either
      const int rc = shell(cmd);
      if (rc != 0) {
        out.pass = false;
        out.failures.push_back(name + ": exit code " + std::to_string(rc));
      }
    }
    const fs::path a = root / (name + "-w1"), b = root / (name + "-w3");
    if (fs::exists(a) && fs::exists(b)) {
      const std::string diff = compare_dirs(a, b);
      if (!diff.empty()) {
        out.pass = false;
        out.failures.push_back(name + ": " + diff);
      }
    }
  }
  // The checkpoint written by `train` drives sample-reverse the same way.
  for (int workers : {1, 3}) {
    const fs::path dir = root / ("reverse-checkpoint-w" + std::to_string(workers));
    const fs::path ckpt = root / ("train-w" + std::to_string(workers)) / "checkpoint.json";
    const int rc = shell(shell_quote(cli) + " sample-reverse --field " + shell_quote("checkpoint:" + ckpt.string()) +
                         " --chains 1000 --steps 50 --seed 7 --workers " + std::to_string(workers) + " --out " +
                         shell_quote(dir));
    if (rc != 0) {
      out.pass = false;
      out.failures.push_back("sample-reverse from checkpoint: exit code " + std::to_string(rc));
    }
  }
  const std::string diff = compare_dirs(root / "reverse-checkpoint-w1", root / "reverse-checkpoint-w3");
  if (!diff.empty()) {
    // config.resolved.json names the checkpoint path, which differs by design.
    const std::string samples_a = read_text_file(root / "reverse-checkpoint-w1" / "samples.csv");
    const std::string samples_b = read_text_file(root / "reverse-checkpoint-w3" / "samples.csv");
    if (samples_a != samples_b) {
      out.pass = false;
      out.failures.push_back("sample-reverse from checkpoint: samples.csv differs");
    }
  }
  if (out.pass) fs::remove_all(root);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  int workers = 1;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else if (a == "--workers" && i + 1 < argc) {
      workers = std::max(1, std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: langsplit_acceptance [--only N]... [--workers W]\n";
      return 2;
    }
  }
  const fs::path scratch = fs::temp_directory_path() / ("langsplit-acceptance-" + std::to_string(::getpid()));

  const std::vector<Criterion> criteria = {
      {1, "conversion exactness", 5, [&] { return from_suite("conversions", workers); }},
      {2, "forward consistency", 120, [&] { return from_suite("forward", workers); }},
      {3, "Langevin stationarity", 120, [&] { return from_suite("langevin", workers); }},
      {4, "split additivity", 0, [&] { return from_suite("split", workers); }},
      {5, "duality / generation", 300, [&] { return from_suite("duality", workers); }},
      {6, "DSM = SM + constant", 0, [&] { return from_suite("dsm", workers); }},
      {7, "gradient correctness", 0, [&] { return from_suite("gradients", workers); }},
      {8, "trained-model quality", 900, [&] { return from_suite("training", workers); }},
      {9, "Fokker-Planck identities", 180, [&] { return from_suite("fokker-planck", workers); }},
      {10, "CLI determinism", 0, [&] { return cli_determinism(scratch); }},
  };

  int failed = 0, ran = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.failures.push_back(std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_seconds == 0 || seconds < c.limit_seconds;
    const bool pass = out.pass && in_time;
    char timing[96];
    if (c.limit_seconds > 0)
      std::snprintf(timing, sizeof timing, "%.1f s, limit %.0f s", seconds, c.limit_seconds);
    else
      std::snprintf(timing, sizeof timing, "%.1f s", seconds);
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.title << " (" << timing << ")\n";
    for (const std::string& f : out.failures) std::cout << "        failed: " << f << "\n";
    if (!in_time) std::cout << "        over the time limit\n";
    std::cout << std::flush;
    if (!pass) ++failed;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
