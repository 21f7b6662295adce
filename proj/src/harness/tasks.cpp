#include <algorithm>
#include <cmath>
#include <random>

#include "resexp/error.hpp"
#include "resexp/harness/harness.hpp"
#include "resexp/ndcore/stats.hpp"

namespace resexp::harness {

namespace {

enum Stream : std::uint64_t { kStructure = 0, kTrain = 1, kTest = 2, kProxy = 3, kEstimation = 4 };

// Radial clip to the input ball, then zero-pad or truncate to the network width.
void place_input(std::span<const double> raw, double radius, std::span<double> out) {
  double ss = 0.0;
  for (double v : raw) ss += v * v;
  const double norm = std::sqrt(ss);
  const double scale = norm > radius ? radius / norm : 1.0;
  const std::size_t n = std::min(raw.size(), out.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = raw[i] * scale;
}

nd::Tensor draw_inputs(std::size_t rows, std::size_t dim, std::size_t width, double radius, std::mt19937_64& rng,
                       const std::function<void(std::size_t, std::span<double>)>& shift) {
  std::normal_distribution<double> nrm(0.0, 1.0);
  nd::Tensor x({rows, width});
  std::vector<double> raw(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (double& v : raw) v = nrm(rng);
    shift(r, raw);
    place_input(raw, radius, x.row(r));
  }
  return x;
}

double clipped_noise(std::normal_distribution<double>& nrm, std::mt19937_64& rng, double sd) {
  return std::clamp(nrm(rng), -4.0, 4.0) * sd;
}

net::NetworkSpec teacher_spec_for(const TaskConfig& task, const net::NetworkSpec& student) {
  net::NetworkSpec t = student;
  t.depth = task.teacher_depth;
  t.branch_width = task.teacher_width > 0 ? task.teacher_width : student.branch_width;
  t.norm_kind = net::NormKind::RmsNormEps;
  t.gamma.clear();
  t.insertion_layer = t.depth;
  t.loss = net::LossKind::Squared;
  return t;
}

double regression_target_bound(const net::NetworkSpec& s, std::size_t outputs, double noise_std, std::size_t depth) {
  const double rep = depth > 0 ? std::sqrt(static_cast<double>(s.width)) : s.input_bound;
  return s.head_cap * rep + 4.0 * noise_std * std::sqrt(static_cast<double>(outputs));
}

net::Dataset make_split(const TaskConfig& task, const net::NetworkSpec& spec, std::size_t rows, std::uint64_t stream,
                        const std::vector<std::vector<double>>& means, const net::NetworkSpec* teacher_spec,
                        const net::NetworkState* teacher) {
  std::mt19937_64 rng(nd::substream_seed(task.seed, stream));
  net::Dataset d;
  if (rows == 0) return d;
  if (task.kind == TaskKind::GaussianMixture) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(task.classes) - 1);
    d.labels.resize(rows);
    d.x = draw_inputs(rows, task.input_dim, spec.width, spec.input_bound, rng, [&](std::size_t r, std::span<double> v) {
      d.labels[r] = pick(rng);
      const auto& m = means[static_cast<std::size_t>(d.labels[r])];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += m[i];
    });
    return d;
  }
  d.x = draw_inputs(rows, task.input_dim, spec.width, spec.input_bound, rng, [](std::size_t, std::span<double>) {});
  const auto out = net::forward_decomposed(*teacher_spec, *teacher, d.x).output;
  std::normal_distribution<double> nrm(0.0, 1.0);
  d.targets = out;
  for (double& v : d.targets.data()) v += clipped_noise(nrm, rng, task.noise_std);
  return d;
}

}  // namespace

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::GaussianMixture: return "gaussian_mixture";
    case TaskKind::TeacherRegression: return "teacher_regression";
    case TaskKind::IndependentNoise: return "independent_noise";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "gaussian_mixture") return TaskKind::GaussianMixture;
  if (s == "teacher_regression") return TaskKind::TeacherRegression;
  if (s == "independent_noise") return TaskKind::IndependentNoise;
  throw Error(ErrorCode::ConfigError, "unknown task kind '" + std::string(s) + "'");
}

net::NetworkSpec spec_for_task(const TaskConfig& task, net::NetworkSpec spec) {
  switch (task.kind) {
    case TaskKind::GaussianMixture:
      spec.output_dim = task.classes;
      spec.loss = net::LossKind::CrossEntropy;
      break;
    case TaskKind::TeacherRegression:
      spec.output_dim = task.classes;
      spec.loss = net::LossKind::Squared;
      spec.target_bound = regression_target_bound(spec, task.classes, task.noise_std, task.teacher_depth);
      break;
    case TaskKind::IndependentNoise:
      spec.output_dim = spec.width;
      spec.loss = net::LossKind::Squared;
      spec.target_bound = regression_target_bound(spec, spec.width, task.noise_std, spec.depth) *
                          std::max(1.0, spec.gamma_max());
      break;
  }
  spec.validate();
  return spec;
}

TaskData make_task(const TaskConfig& task, const net::NetworkSpec& spec_in) {
  if (task.M == 0 || task.K == 0) throw Error(ErrorCode::EmptyDataset, "task needs M, K > 0");
  if (task.input_dim == 0 || task.classes == 0) throw Error(ErrorCode::InvalidArgument, "task dimensions");
  const net::NetworkSpec spec = spec_for_task(task, spec_in);
  std::mt19937_64 rng(nd::substream_seed(task.seed, kStructure));
  TaskData out;
  out.target_bound = spec.target_bound;

  std::vector<std::vector<double>> means;
  std::optional<net::NetworkSpec> teacher_spec;
  if (task.kind == TaskKind::GaussianMixture) {
    // Scaled coordinate directions: pairwise mean distance equals the separation.
    std::normal_distribution<double> nrm(0.0, 1.0);
    for (std::size_t c = 0; c < task.classes; ++c) {
      std::vector<double> m(task.input_dim, 0.0);
      if (task.classes <= task.input_dim) {
        m[c] = task.separation / std::sqrt(2.0);
      } else {
        double ss = 0.0;
        for (double& v : m) {
          v = nrm(rng);
          ss += v * v;
        }
        for (double& v : m) v *= task.separation / std::sqrt(2.0 * ss);
      }
      means.push_back(std::move(m));
    }
  } else if (task.kind == TaskKind::TeacherRegression) {
    teacher_spec = teacher_spec_for(task, spec);
    out.teacher_state = net::init_state(*teacher_spec, rng());
  } else {
    // Student = teacher with a signed-permutation head, so d loss / d z = -head^T noise
    // has independent coordinates.
    teacher_spec = spec;
    net::NetworkState t = net::init_state(spec, rng());
    std::mt19937_64 brng(nd::substream_seed(task.seed, kStructure + 100));
    net::freeze_norm_statistics(
        spec, t,
        draw_inputs(1024, task.input_dim, spec.width, spec.input_bound, brng, [](std::size_t, std::span<double>) {}));
    const std::size_t n = spec.width;
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::bernoulli_distribution coin(0.5);
    const double s = std::min(1.0, spec.head_cap);
    t.head = nd::Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) t.head(i, perm[i]) = coin(rng) ? s : -s;
    out.teacher_state = std::move(t);
  }

  const net::NetworkState* teacher = out.teacher_state ? &*out.teacher_state : nullptr;
  const net::NetworkSpec* tspec = teacher_spec ? &*teacher_spec : nullptr;
  out.train = make_split(task, spec, task.M, kTrain, means, tspec, teacher);
  out.test = make_split(task, spec, task.K, kTest, means, tspec, teacher);
  out.proxy = make_split(task, spec, task.M_proxy, kProxy, means, tspec, teacher);
  out.estimation = make_split(task, spec, task.M_estimation, kEstimation, means, tspec, teacher);
  return out;
}

}  // namespace resexp::harness
