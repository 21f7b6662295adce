#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "resexp/error.hpp"
#include "resexp/harness/harness.hpp"
#include "resexp/ndcore/stats.hpp"
#include "resexp/netmodel/serialize.hpp"

namespace resexp::harness {

namespace {

using CellKey = std::tuple<std::size_t, std::size_t, std::uint64_t>;  // depth, width, seed

std::vector<std::uint64_t> unique_seeds(const std::vector<std::uint64_t>& seeds) {
  std::vector<std::uint64_t> out;
  for (auto s : seeds)
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  return out;
}

std::vector<CellKey> grid(const SweepConfig& cfg) {
  std::vector<CellKey> cells;
  for (auto d : cfg.depths)
    for (auto w : cfg.widths)
      for (auto s : unique_seeds(cfg.seeds)) cells.emplace_back(d, w, s);
  return cells;
}

net::NetworkSpec cell_spec(const net::NetworkSpec& base, const TaskConfig& task, std::size_t depth,
                           std::size_t width) {
  net::NetworkSpec s = base;
  s.depth = depth;
  s.width = width;
  s.branch_width = width;
  s.insertion_layer = depth;
  s.gamma.clear();
  return spec_for_task(task, s);
}

std::string sweep_digest(std::string_view kind, const SweepConfig& cfg, const TaskConfig& task,
                         const net::NetworkSpec& spec) {
  io::Json j{{"kind", kind},
             {"depths", cfg.depths},
             {"widths", cfg.widths},
             {"seeds", unique_seeds(cfg.seeds)},
             {"lr", cfg.optimizer.lr},
             {"steps", cfg.optimizer.steps},
             {"batch", cfg.optimizer.batch},
             {"trace_every", cfg.optimizer.trace_every},
             {"keep_best", cfg.optimizer.keep_best},
             {"task", {{"kind", to_string(task.kind)},
                       {"classes", task.classes},
                       {"input_dim", task.input_dim},
                       {"separation", task.separation},
                       {"noise_std", task.noise_std},
                       {"M", task.M},
                       {"K", task.K}}},
             {"spec", net::spec_to_json(spec)}};
  return io::sha256_hex(j.dump());
}

// Completed-cell journal: JSON lines {"digest", "depth", "width", "seed", "values": {...}}.
class Journal {
 public:
  Journal(std::optional<std::filesystem::path> path, std::string digest)
      : path_(std::move(path)), digest_(std::move(digest)) {
    if (!path_ || !std::filesystem::exists(*path_)) return;
    std::ifstream in(*path_);
    std::string line;
    while (std::getline(in, line)) {
      io::Json j;
      try {
        j = io::Json::parse(line);
      } catch (const nlohmann::json::exception&) {
        continue;  // torn trailing write
      }
      if (!j.is_object() || j.value("digest", "") != digest_) continue;
      done_[{j.at("depth").get<std::size_t>(), j.at("width").get<std::size_t>(), j.at("seed").get<std::uint64_t>()}] =
          j.at("values");
    }
  }

  const io::Json* find(const CellKey& k) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = done_.find(k);
    return it == done_.end() ? nullptr : &it->second;
  }

  void record(const CellKey& k, io::Json values) {
    std::lock_guard<std::mutex> lock(mu_);
    if (path_) {
      if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
      std::ofstream out(*path_, std::ios::app);
      io::Json line{{"digest", digest_},
                    {"depth", std::get<0>(k)},
                    {"width", std::get<1>(k)},
                    {"seed", std::get<2>(k)},
                    {"values", values}};
      out << line.dump() << "\n";
      out.flush();
    }
    done_[k] = std::move(values);
  }

 private:
  std::optional<std::filesystem::path> path_;
  std::string digest_;
  std::map<CellKey, io::Json> done_;
  mutable std::mutex mu_;
};

struct CellRun {
  net::NetworkSpec spec;
  TaskData data;
  TrainResult trained;
};

CellRun run_cell(const SweepConfig& cfg, const TaskConfig& task_in, const net::NetworkSpec& base, const CellKey& k) {
  const auto [depth, width, seed] = k;
  TaskConfig task = task_in;
  task.seed = seed;
  task.M_proxy = 0;
  task.M_estimation = 0;
  CellRun run;
  run.spec = cell_spec(base, task, depth, width);
  run.data = make_task(task, run.spec);
  SgdConfig opt = cfg.optimizer;
  opt.seed = nd::substream_seed(seed, 1000003ULL * depth + width);
  run.trained = train_base(run.spec, run.data.train, opt, nd::substream_seed(seed, 7919ULL * depth + 31ULL * width + 1));
  return run;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void SweepConfig::validate() const {
  if (depths.empty() || widths.empty() || seeds.empty()) {
    throw Error(ErrorCode::ConfigError, "sweep needs nonempty depths, widths and seeds");
  }
  for (auto w : widths)
    if (w == 0) throw Error(ErrorCode::ConfigError, "widths must be positive");
}

void run_work_queue(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      {
        std::lock_guard<std::mutex> lock(mu);
        if (first) return;
      }
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
        return;
      }
    }
  };
  const std::size_t w = std::max<std::size_t>(1, std::min(workers, n));
  if (w == 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < w; ++i) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
}

DecaySummary gradient_decay_sweep(const SweepConfig& cfg, const TaskConfig& task, const net::NetworkSpec& base_spec,
                                  const SweepIo& io) {
  cfg.validate();
  const auto cells = grid(cfg);
  Journal journal(io.journal, sweep_digest("gradient_decay", cfg, task, base_spec));
  run_work_queue(cells.size(), cfg.workers, [&](std::size_t i) {
    if (journal.find(cells[i])) return;
    CellRun run = run_cell(cfg, task, base_spec, cells[i]);
    const auto ag = net::activation_gradients(run.spec, run.trained.state, run.data.train);
    const double mu_norm = nd::row_mean(ag.q).norm();
    journal.record(cells[i], {{"mu_norm", mu_norm}, {"train_loss", run.trained.final_loss}});
  });

  DecaySummary s;
  const std::size_t shallowest = *std::min_element(cfg.depths.begin(), cfg.depths.end());
  for (const auto& k : cells) {
    const io::Json& v = *journal.find(k);
    const io::Json& ref = *journal.find({shallowest, std::get<1>(k), std::get<2>(k)});
    DecayRow row;
    std::tie(row.depth, row.width, row.seed) = k;
    row.mu_norm = v.at("mu_norm").get<double>();
    row.train_loss = v.at("train_loss").get<double>();
    const double r = ref.at("mu_norm").get<double>();
    row.normalized = r > 0.0 ? row.mu_norm / r : 0.0;
    s.rows.push_back(row);
  }
  std::vector<double> depth_axis;
  for (auto d : cfg.depths) {
    if (std::find(depth_axis.begin(), depth_axis.end(), static_cast<double>(d)) != depth_axis.end()) continue;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : s.rows) {
      if (row.depth == d) {
        sum += row.normalized;
        ++n;
      }
    }
    depth_axis.push_back(static_cast<double>(d));
    s.depth_mean_normalized.push_back(sum / static_cast<double>(n));
  }
  s.spearman_depth = depth_axis.size() >= 2 ? nd::spearman(depth_axis, s.depth_mean_normalized) : 0.0;
  return s;
}

JointSummary joint_scaling_sweep(const SweepConfig& cfg, const TaskConfig& task, const net::NetworkSpec& base_spec,
                                 const SweepIo& io) {
  cfg.validate();
  const auto cells = grid(cfg);
  Journal journal(io.journal, sweep_digest("joint_scaling", cfg, task, base_spec));
  run_work_queue(cells.size(), cfg.workers, [&](std::size_t i) {
    if (journal.find(cells[i])) return;
    CellRun run = run_cell(cfg, task, base_spec, cells[i]);
    const double test = net::mean_loss(run.spec, run.trained.state, nullptr, run.data.test);
    journal.record(cells[i], {{"train_loss", run.trained.final_loss}, {"test_loss", test}});
  });

  JointSummary s;
  for (const auto& k : cells) {
    const io::Json& v = *journal.find(k);
    JointRow row;
    std::tie(row.depth, row.width, row.seed) = k;
    row.train_loss = v.at("train_loss").get<double>();
    row.test_loss = v.at("test_loss").get<double>();
    s.rows.push_back(row);
  }
  auto mean_std = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
  };
  for (auto d : cfg.depths) {
    for (auto w : cfg.widths) {
      if (std::any_of(s.cells.begin(), s.cells.end(), [&](const JointCell& c) { return c.depth == d && c.width == w; }))
        continue;
      std::vector<double> tr, te;
      for (const auto& row : s.rows) {
        if (row.depth == d && row.width == w) {
          tr.push_back(row.train_loss);
          te.push_back(row.test_loss);
        }
      }
      JointCell c;
      c.depth = d;
      c.width = w;
      c.n_seeds = tr.size();
      std::tie(c.mean_train, c.std_train) = mean_std(tr);
      std::tie(c.mean_test, c.std_test) = mean_std(te);
      s.cells.push_back(c);
    }
  }
  return s;
}

std::string decay_csv(const DecaySummary& s) {
  std::ostringstream os;
  os << "depth,width,seed,mu_norm,normalized_mu_norm,train_loss\n";
  for (const auto& r : s.rows) {
    os << r.depth << ',' << r.width << ',' << r.seed << ',' << fmt17(r.mu_norm) << ',' << fmt17(r.normalized) << ','
       << fmt17(r.train_loss) << '\n';
  }
  return os.str();
}

std::string joint_rows_csv(const JointSummary& s) {
  std::ostringstream os;
  os << "depth,width,seed,train_loss,test_loss\n";
  for (const auto& r : s.rows) {
    os << r.depth << ',' << r.width << ',' << r.seed << ',' << fmt17(r.train_loss) << ',' << fmt17(r.test_loss) << '\n';
  }
  return os.str();
}

std::string joint_cells_csv(const JointSummary& s) {
  std::ostringstream os;
  os << "depth,width,n_seeds,mean_train_loss,std_train_loss,mean_test_loss,std_test_loss\n";
  for (const auto& c : s.cells) {
    os << c.depth << ',' << c.width << ',' << c.n_seeds << ',' << fmt17(c.mean_train) << ',' << fmt17(c.std_train)
       << ',' << fmt17(c.mean_test) << ',' << fmt17(c.std_test) << '\n';
  }
  return os.str();
}

}  // namespace resexp::harness
