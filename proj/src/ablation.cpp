#include "mtcmtm/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <future>
#include <sstream>
#include <thread>

namespace mtcmtm {

namespace {

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

bool same_fraction(double a, double b) { return std::abs(a - b) < 1e-12; }

}  // namespace

const std::vector<std::string>& ablation_strategies() {
  static const std::vector<std::string> rows{"pm", "pretext_mask", "pretext_feature", "mmcl",
                                             "mt_cmtm"};
  return rows;
}

std::optional<PretrainStrategy> row_strategy(const std::string& row) {
  if (row == "pm") return std::nullopt;
  if (row == "pretext_mask") return PretrainStrategy::mtm_mask;
  if (row == "pretext_feature") return PretrainStrategy::mtm_feature;
  if (row == "mmcl") return PretrainStrategy::mmcl;
  if (row == "mt_cmtm") return PretrainStrategy::mt_cmtm;
  throw std::invalid_argument("unknown ablation row '" + row + "'");
}

std::shared_ptr<const Checkpoint> PretrainCache::get(const RunConfig& cfg, const PairedDataset& ds,
                                                     std::uint64_t seed) {
  const std::string key =
      fnv1a_hex(pretrain_config_hash(cfg, seed) + "/" + dataset_fingerprint(ds));
  {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      ++hits_;
      return it->second;
    }
  }
  const auto file = dir_.empty() ? std::filesystem::path{} : dir_ / (key + ".ckpt");
  std::shared_ptr<const Checkpoint> ckpt;
  if (!file.empty() && std::filesystem::exists(file)) {
    ckpt = std::make_shared<const Checkpoint>(load_checkpoint(file));
  } else {
    ckpt = std::make_shared<const Checkpoint>(pretrain(cfg, ds, seed).checkpoint);
    if (!file.empty()) {
      std::filesystem::create_directories(dir_);
      save_checkpoint(file, *ckpt);
    }
  }
  std::lock_guard lock(mu_);
  ++misses_;
  auto [it, inserted] = entries_.emplace(key, ckpt);
  return it->second;
}

std::size_t PretrainCache::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

std::size_t PretrainCache::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

AblationReport run_ablation(const RunConfig& cfg, const PairedDataset& ds, PretrainCache& cache,
                            const AblationOptions& options) {
  if (options.strategies.empty() || options.train_fractions.empty()) {
    throw std::invalid_argument("run_ablation: no strategies or fractions");
  }
  AblationReport report;
  report.task = ds.task().kind;
  report.test_ids = ds.ids(SplitTag::test);
  report.has_test_split = !report.test_ids.empty();
  if (!report.has_test_split) report.test_ids = ds.ids(SplitTag::val);

  struct Job {
    std::string strategy;
    double fraction;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& s : options.strategies) {
    row_strategy(s);  // validates the name
    for (double f : options.train_fractions) {
      for (std::uint64_t seed : cfg.run.seeds) jobs.push_back({s, f, seed});
    }
  }
  report.rows.resize(jobs.size());

  auto run_job = [&](std::size_t i) {
    const Job& job = jobs[i];
    RunConfig c = cfg;
    c.finetune.train_fraction = job.fraction;
    std::shared_ptr<const Checkpoint> init;
    if (auto strategy = row_strategy(job.strategy)) {
      c.pretrain.heads.strategy = *strategy;
      init = cache.get(c, ds, job.seed);
    }
    const FinetuneResult r = finetune(c, ds, job.seed, init.get());
    report.rows[i] = AblationRow{job.strategy, job.seed, job.fraction, r.best_epoch, r.val, r.test};
  };

  const std::size_t threads = std::min<std::size_t>(cfg.run.threads, jobs.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
    return report;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(i);
    }));
  }
  for (auto& w : workers) w.get();
  return report;
}

std::string ablation_csv(const AblationReport& report) {
  std::ostringstream os;
  const bool reg = report.task == TaskKind::regression;
  os << "strategy,seed,train_fraction,best_epoch,"
     << (reg ? "val_mse,val_mae,test_mse,test_mae" : "val_accuracy,test_accuracy,test_balanced_accuracy,test_macro_f1")
     << ",eval_split\n";
  for (const auto& r : report.rows) {
    os << r.strategy << "," << r.seed << "," << fmt(r.train_fraction) << "," << r.best_epoch << ",";
    if (reg) {
      os << fmt(r.val.regression.mse, 17) << "," << fmt(r.val.regression.mae, 17) << ","
         << fmt(r.test.regression.mse, 17) << "," << fmt(r.test.regression.mae, 17);
    } else {
      os << fmt(r.val.classification.accuracy, 17) << "," << fmt(r.test.classification.accuracy, 17)
         << "," << fmt(r.test.classification.balanced_accuracy, 17) << ","
         << fmt(r.test.classification.macro_f1, 17);
    }
    os << "," << (report.has_test_split ? "test" : "val") << "\n";
  }
  return os.str();
}

std::string ablation_table(const AblationReport& report) {
  const bool reg = report.task == TaskKind::regression;
  std::vector<double> fractions;
  std::vector<std::string> strategies;
  for (const auto& r : report.rows) {
    if (std::none_of(fractions.begin(), fractions.end(), [&](double f) { return same_fraction(f, r.train_fraction); })) {
      fractions.push_back(r.train_fraction);
    }
    if (std::find(strategies.begin(), strategies.end(), r.strategy) == strategies.end()) {
      strategies.push_back(r.strategy);
    }
  }
  std::ostringstream os;
  char line[256];
  if (reg) {
    std::snprintf(line, sizeof(line), "%-16s %8s %5s  %-22s %-22s\n", "strategy", "fraction", "runs",
                  "test MSE", "test MAE");
  } else {
    std::snprintf(line, sizeof(line), "%-16s %8s %5s  %-22s %-22s %-22s\n", "strategy", "fraction",
                  "runs", "accuracy", "balanced acc", "macro F1");
  }
  os << line;
  for (double f : fractions) {
    for (const auto& s : strategies) {
      std::vector<double> a, b, c;
      for (const auto& r : report.rows) {
        if (r.strategy != s || !same_fraction(r.train_fraction, f)) continue;
        if (reg) {
          a.push_back(r.test.regression.mse);
          b.push_back(r.test.regression.mae);
        } else {
          a.push_back(r.test.classification.accuracy);
          b.push_back(r.test.classification.balanced_accuracy);
          c.push_back(r.test.classification.macro_f1);
        }
      }
      if (a.empty()) continue;
      auto cell = [](const std::vector<double>& v) {
        const MeanStd m = mean_std(v);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f +- %.4f", m.mean, m.std);
        return std::string(buf);
      };
      if (reg) {
        std::snprintf(line, sizeof(line), "%-16s %8.3g %5zu  %-22s %-22s\n", s.c_str(), f, a.size(),
                      cell(a).c_str(), cell(b).c_str());
      } else {
        std::snprintf(line, sizeof(line), "%-16s %8.3g %5zu  %-22s %-22s %-22s\n", s.c_str(), f,
                      a.size(), cell(a).c_str(), cell(b).c_str(), cell(c).c_str());
      }
      os << line;
    }
  }
  if (!report.has_test_split) os << "(no test split: metrics are on the validation fold)\n";
  return os.str();
}

double test_score(const AblationReport& report, const std::string& strategy, std::uint64_t seed,
                  double fraction) {
  for (const auto& r : report.rows) {
    if (r.strategy == strategy && r.seed == seed && same_fraction(r.train_fraction, fraction)) {
      return r.test.score();
    }
  }
  throw std::out_of_range("no ablation row for " + strategy + " seed " + std::to_string(seed));
}

double mean_test_score(const AblationReport& report, const std::string& strategy, double fraction) {
  std::vector<double> v;
  for (const auto& r : report.rows) {
    if (r.strategy == strategy && same_fraction(r.train_fraction, fraction)) v.push_back(r.test.score());
  }
  if (v.empty()) throw std::out_of_range("no ablation rows for " + strategy);
  return mean_std(v).mean;
}

}  // namespace mtcmtm
