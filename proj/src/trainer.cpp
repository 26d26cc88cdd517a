#include "cccnet/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "cccnet/error.hpp"

namespace cccnet {

Trainer::Trainer(ModelParams params, TrainSchedule schedule, std::uint64_t seed,
                 std::size_t train_size)
    : params_(std::move(params)),
      schedule_(schedule),
      seed_(seed),
      train_size_(train_size),
      adam_(params_, AdamConfig{schedule.learning_rate}),
      lr_(schedule.learning_rate, schedule.saddle),
      best_(params_.clone()) {
  schedule_.validate();
  if (train_size_ == 0) throw InvalidArgument("trainer: empty training set");
}

std::vector<std::size_t> Trainer::epoch_order(std::uint64_t seed, std::size_t epoch,
                                              std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void Trainer::run(const TrainerCallbacks& callbacks,
                  const std::function<void(const EpochRecord&)>& on_epoch,
                  std::size_t stop_at) {
  const std::size_t batch = schedule_.batch_size;
  const std::size_t limit = std::min(schedule_.epochs, stop_at);
  while (epoch_ < limit) {
    const auto order = epoch_order(seed_, epoch_, train_size_);
    const double lr = lr_.current_lr();
    adam_.config.learning_rate = lr;
    double weighted_loss = 0.0;
    params_.zero_grad();
    for (std::size_t start = 0; start < train_size_; start += batch) {
      const std::size_t stop = std::min(train_size_, start + batch);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      const double loss = callbacks.train_batch(idx);
      adam_step(params_, adam_);
      weighted_loss += loss * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.learning_rate = lr;
    rec.train_loss = weighted_loss / static_cast<double>(train_size_);
    rec.validation = static_cast<float>(callbacks.validate());
    rec.escape = lr_.observe(rec.train_loss);
    if (!has_best_ || rec.validation < best_value_) {
      has_best_ = true;
      best_value_ = rec.validation;
      best_.assign_values(params_);
    }
    ++epoch_;
    if (on_epoch) on_epoch(rec);
  }
}

const ModelParams& Trainer::best_params() const { return has_best_ ? best_ : params_; }

ModelParams Trainer::export_state() const {
  ModelParams state;
  for (const auto& e : params_) state.add("param." + e.name, e.tensor.detach());
  for (const auto& e : best_) state.add("best." + e.name, e.tensor.detach());
  adam_.export_to(params_, state);
  state.add("trainer.meta",
            Tensor::from_data({3}, {static_cast<Scalar>(epoch_),
                                    static_cast<Scalar>(has_best_ ? 1 : 0),
                                    static_cast<Scalar>(best_value_)}));
  const auto lr_state = lr_.export_state();
  state.add("trainer.lr", Tensor::from_data({lr_state.size()},
                                            std::vector<Scalar>(lr_state.begin(), lr_state.end())));
  return state;
}

void Trainer::import_state(const ModelParams& state) {
  ModelParams values, best_values;
  for (const auto& e : params_) {
    values.add(e.name, state.at("param." + e.name));
    best_values.add(e.name, state.at("best." + e.name));
  }
  params_.assign_values(values);
  best_.assign_values(best_values);
  adam_.import_from(params_, state);
  const auto meta = state.at("trainer.meta").data();
  if (meta.size() != 3) throw FormatError("trainer state: malformed meta entry");
  epoch_ = static_cast<std::size_t>(meta[0]);
  has_best_ = meta[1] != 0;
  best_value_ = static_cast<double>(meta[2]);
  const auto lr_data = state.at("trainer.lr").data();
  lr_.import_state(std::vector<double>(lr_data.begin(), lr_data.end()));
}

}  // namespace cccnet
