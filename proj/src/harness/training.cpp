#include <algorithm>
#include <numeric>
#include <random>

#include "resexp/error.hpp"
#include "resexp/harness/harness.hpp"

namespace resexp::harness {

namespace {

// Epoch-shuffled minibatch indices, deterministic in the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : order_(n), batch_(std::max<std::size_t>(1, std::min(batch, n))), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

double checked_loss(const net::NetworkSpec& spec, const net::NetworkState& s, const net::InsertedBlock* b,
                    const net::Dataset& data, std::size_t step) {
  double v = 0.0;
  try {
    v = net::mean_loss(spec, s, b, data);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFinite) throw;
    v = std::numeric_limits<double>::quiet_NaN();
  }
  if (!std::isfinite(v)) throw Error(ErrorCode::DivergedTraining, "train loss not finite at step " + std::to_string(step));
  return v;
}

void sgd_update(nd::Tensor& w, const nd::Tensor& g, double lr) {
  auto wd = w.data();
  auto gd = g.data();
  for (std::size_t i = 0; i < wd.size(); ++i) wd[i] -= lr * gd[i];
}

double step_lr(const SgdConfig& opt, std::size_t step) {
  if (!opt.linear_decay) return opt.lr;
  return opt.lr * (1.0 - static_cast<double>(step - 1) / static_cast<double>(opt.steps));
}

}  // namespace

TrainResult train_base(const net::NetworkSpec& spec, const net::Dataset& train, const SgdConfig& opt,
                       std::uint64_t init_seed) {
  net::NetworkState init = net::init_state(spec, init_seed);
  net::freeze_norm_statistics(spec, init, train.x);
  return train_base(spec, train, opt, std::move(init));
}

TrainResult train_base(const net::NetworkSpec& spec, const net::Dataset& train, const SgdConfig& opt,
                       net::NetworkState state) {
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "train_base on empty dataset");
  if (!(opt.lr >= 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be >= 0");
  TrainResult out;
  out.initial_loss = checked_loss(spec, state, nullptr, train, 0);
  out.trace_steps.push_back(0);
  out.trace_loss.push_back(out.initial_loss);
  net::NetworkState best = state;
  double best_loss = out.initial_loss;
  BatchSampler sampler(train.size(), opt.batch, opt.seed);
  const std::size_t every = std::max<std::size_t>(1, opt.trace_every);

  for (std::size_t step = 1; step <= opt.steps; ++step) {
    const auto idx = sampler.next();
    const net::Dataset batch = train.gather(idx);
    const double lr = step_lr(opt, step);
    try {
      nd::Tape tape;
      const auto tr = net::record_forward(tape, spec, state, nullptr, batch.x);
      const auto loss = tape.mean(net::record_loss(tape, spec, tr.output, batch));
      tape.backward(loss);
      for (std::size_t l = 0; l < spec.depth; ++l) {
        sgd_update(state.layers[l].w1, tape.grad(tr.w1[l]), lr);
        sgd_update(state.layers[l].w2, tape.grad(tr.w2[l]), lr);
      }
      sgd_update(state.head, tape.grad(tr.head), lr);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFinite) {
        throw Error(ErrorCode::DivergedTraining, "non-finite values at step " + std::to_string(step));
      }
      throw;
    }
    state = net::project_norms(state, spec);
    if (step % every == 0 || step == opt.steps) {
      const double v = checked_loss(spec, state, nullptr, train, step);
      out.trace_steps.push_back(step);
      out.trace_loss.push_back(v);
      if (v < best_loss) {
        best_loss = v;
        best = state;
      }
    }
  }
  if (opt.keep_best) {
    out.state = std::move(best);
    out.final_loss = best_loss;
  } else {
    out.state = std::move(state);
    out.final_loss = out.trace_loss.back();
  }
  return out;
}

jump::ExpandedModel finetune_block(const net::NetworkSpec& spec, const jump::ExpandedModel& model,
                                   const net::Dataset& train, const SgdConfig& opt, bool joint) {
  if (!model.block) throw Error(ErrorCode::InvalidArgument, "finetune_block needs an inserted block");
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "finetune_block on empty dataset");
  jump::ExpandedModel cur = model;
  jump::ExpandedModel best = model;
  double best_loss = checked_loss(spec, cur.state, cur.block_ptr(), train, 0);
  BatchSampler sampler(train.size(), opt.batch, opt.seed);
  const std::size_t every = std::max<std::size_t>(1, opt.trace_every);

  for (std::size_t step = 1; step <= opt.steps; ++step) {
    const net::Dataset batch = train.gather(sampler.next());
    try {
      nd::Tape tape;
      const auto tr = net::record_forward(tape, spec, cur.state, cur.block_ptr(), batch.x);
      tape.backward(tape.mean(net::record_loss(tape, spec, tr.output, batch)));
      const double lr = step_lr(opt, step);
      sgd_update(cur.block->v, tape.grad(*tr.block_v), lr);
      if (joint) {
        for (std::size_t l = 0; l < spec.depth; ++l) {
          sgd_update(cur.state.layers[l].w1, tape.grad(tr.w1[l]), lr);
          sgd_update(cur.state.layers[l].w2, tape.grad(tr.w2[l]), lr);
        }
        sgd_update(cur.state.head, tape.grad(tr.head), lr);
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFinite) {
        throw Error(ErrorCode::DivergedTraining, "non-finite values at fine-tune step " + std::to_string(step));
      }
      throw;
    }
    cur.block->v = net::project_matrix(cur.block->v, cur.block->v_sigma_cap, cur.block->v_frob_cap);
    if (joint) cur.state = net::project_norms(cur.state, spec);
    if (step % every == 0 || step == opt.steps) {
      const double v = checked_loss(spec, cur.state, cur.block_ptr(), train, step);
      if (!opt.keep_best || v < best_loss) {
        best_loss = v;
        best = cur;
      }
    }
  }
  return opt.keep_best ? best : cur;
}

}  // namespace resexp::harness
