#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "graphdyn/errors.hpp"
#include "graphdyn/model.hpp"

using namespace graphdyn;

static_assert(GraphNet<KanNet>);
static_assert(GraphNet<MlpNet>);
static_assert(!GraphNet<Graph>);

namespace {

std::vector<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Dataset synthetic(DynKind kind, std::size_t n, std::size_t T, double t1, double lo, double hi, std::uint64_t seed) {
  Dataset ds;
  ds.graph = gen_ba(n, 3, seed);
  ds.traj = integrate(ground_truth_rhs(DynSpec::defaults(kind)), ds.graph, uniform(n, lo, hi, seed + 1), 1, 0.0, t1, T);
  ds.split = make_split(T, 0.8, 0.2);
  return ds;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

template <class Net>
void gradient_check(const GraphOdeModel<Net>& model, const TrainingData& data, const Penalty& pen, std::uint64_t seed) {
  std::vector<std::size_t> batch{0, 3, 5};
  std::vector<double> grad(model.parameter_count(), 0.0);
  model_loss(model, data, batch, pen, grad);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, model.parameter_count() - 1);
  const double h = 1e-6;
  for (int q = 0; q < 50; ++q) {
    const std::size_t p = pick(rng);
    auto a = model, b = model;
    auto bump = [&](GraphOdeModel<Net>& m, double dv) {
      if (p < m.h.parameter_count()) m.h.params()[p] += dv;
      else m.g.params()[p - m.h.parameter_count()] += dv;
    };
    bump(a, h);
    bump(b, -h);
    const double fd = (model_loss(a, data, batch, pen).total() - model_loss(b, data, batch, pen).total()) / (2 * h);
    INFO("param " << p);
    CHECK(rel_err(grad[p], fd) < 1e-4);
  }
}

}  // namespace

TEST_CASE("training data alignment") {
  const Dataset ds = synthetic(DynKind::Bio, 12, 40, 1.0, 0, 1, 3);
  const TrainingData data = make_training_data(ds);
  CHECK(data.samples() == 36);
  CHECK(data.train.size() == 30);  // samples 2..31 lie in the first 32
  CHECK(data.train.front() == 0);
  CHECK(data.val.front() == 30);
  CHECK(data.val.size() == 6);
  CHECK(std::equal(data.states.begin(), data.states.begin() + 12, ds.traj.at(2).begin()));
  const auto st = stencil_derivatives(ds.traj);
  CHECK(data.targets == st.derivs);
}

TEST_CASE("prediction structure") {
  TrainConfig cfg;
  cfg.seed = 4;
  auto m = make_model<KanNet>(cfg, 1);
  const Graph empty(5);
  const auto x = uniform(5, -1, 1, 2);
  const auto y = predict_derivative(m, x, empty);
  for (std::size_t i = 0; i < 5; ++i) CHECK(y[i] == m.h.forward(std::vector<double>{x[i]})[0]);

  // H = 0, G = 1 inside the grid counts neighbours.
  GraphOdeModel<KanNet> deg{KanNet(KanConfig{{1, 1}, 5, 3}, 1), KanNet(KanConfig{{2, 1}, 5, 3}, 2)};
  for (auto& p : deg.h.params()) p = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    auto p = deg.g.edge_params(0, 0, i);
    for (std::size_t k = 0; k < 8; ++k) p[k] = 0.5;
    p[8] = 0.0;
    p[9] = 1.0;
  }
  const Graph g = gen_ba(20, 2, 5);
  const auto d = predict_derivative(deg, uniform(20, -3, 3, 1), g);
  const auto degree = g.degrees();
  for (std::size_t i = 0; i < 20; ++i) CHECK(d[i] == doctest::Approx(static_cast<double>(degree[i])).epsilon(1e-12));

  CHECK_THROWS_AS(predict_derivative(m, std::vector<double>{1, 2}, g), ShapeError);
}

TEST_CASE("full loss gradient: KAN backend") {
  const TrainingData data = make_training_data(synthetic(DynKind::Epid, 10, 20, 1.0, 0, 1, 7));
  const std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> archs{
      {{1}, {2}}, {{2}, {2}}, {{3}, {4}}, {{}, {2}}, {{2, 2}, {3}}, {{1}, {5}}, {{4}, {2, 2}}, {{2}, {6}},
      {{3}, {3}}, {{1, 1}, {2, 3}}};
  int idx = 0;
  for (const auto& [hh, gh] : archs) {
    TrainConfig cfg;
    cfg.h_hidden = hh;
    cfg.g_hidden = gh;
    cfg.grid = 5 + idx;
    cfg.degree = 1 + idx % 3;
    cfg.range = 2.0;
    cfg.seed = 50 + idx;
    auto m = make_model<KanNet>(cfg, 1);
    std::mt19937_64 rng(idx);
    std::normal_distribution<double> n(0, 0.3);
    for (auto& p : m.h.params()) p += n(rng);
    for (auto& p : m.g.params()) p += n(rng);
    INFO("architecture " << idx);
    gradient_check(m, data, Penalty{0.05, 0.6, 0.3, 0.0}, idx);
    ++idx;
  }
}

TEST_CASE("full loss gradient: MLP backend") {
  const TrainingData data = make_training_data(synthetic(DynKind::Bio, 10, 20, 1.0, 0, 1, 9));
  const std::vector<std::vector<std::size_t>> archs{{8},      {16},    {8, 8},  {12},   {32},
                                                    {10, 6},  {64},    {9},     {8, 16}, {20}};
  int idx = 0;
  for (const auto& hidden : archs) {
    TrainConfig cfg;
    cfg.backend = Backend::Mlp;
    cfg.mlp_hidden = hidden;
    cfg.activation = idx % 2 ? Activation::Softplus : Activation::Tanh;
    cfg.seed = 70 + idx;
    const auto m = make_model<MlpNet>(cfg, 1);
    INFO("architecture " << idx);
    gradient_check(m, data, Penalty{0.0, 1.0, 1.0, 1e-3}, idx);
    ++idx;
  }
}

TEST_CASE("memorizes a single sample") {
  Dataset ds = synthetic(DynKind::Bio, 8, 5, 0.1, 0, 1, 2);
  ds.split = make_split(5, 1.0, 0.0);
  const TrainingData data = make_training_data(ds);
  REQUIRE(data.train.size() == 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.003;
  cfg.range = 1.5;
  cfg.grid = 10;
  cfg.epochs = 3000;
  cfg.batch_size = 1;
  cfg.seed = 1;
  const auto r = train<KanNet>(data, cfg);
  CHECK(model_mae(r.model, data, data.train) < 1e-3);
  CHECK(r.history.size() == 3000);

  cfg.backend = Backend::Mlp;
  cfg.mlp_hidden = {64, 64};
  cfg.activation = Activation::Relu;
  cfg.learning_rate = 1e-4;
  cfg.epochs = 10000;
  const auto rm = train<MlpNet>(data, cfg);
  CHECK(model_mae(rm.model, data, data.train) < 1e-3);
}

TEST_CASE("training lowers the error and is deterministic") {
  const TrainingData data = make_training_data(synthetic(DynKind::Epid, 20, 120, 2.0, 0, 1, 5));
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = seed;
    cfg.lambda = 1e-4;
    const auto before = model_mae(make_model<KanNet>(cfg, 1), data, data.train);
    const auto r = train<KanNet>(data, cfg);
    CHECK(model_mae(r.model, data, data.train) < before);
    const auto again = train<KanNet>(data, cfg);
    REQUIRE(again.history.size() == r.history.size());
    for (std::size_t e = 0; e < r.history.size(); ++e) {
      CHECK(again.history[e].train_loss == r.history[e].train_loss);
      CHECK(again.history[e].val_mae == r.history[e].val_mae);
    }
    CHECK(again.model.h.params().size() == r.model.h.params().size());
    CHECK(std::equal(again.model.g.params().begin(), again.model.g.params().end(), r.model.g.params().begin()));
  }
  TrainConfig mlp;
  mlp.backend = Backend::Mlp;
  mlp.epochs = 5;
  mlp.dropout = 0.2;
  const auto a = train<MlpNet>(data, mlp), b = train<MlpNet>(data, mlp);
  CHECK(a.history.back().train_loss == b.history.back().train_loss);
}

TEST_CASE("best validation parameters are returned") {
  const TrainingData data = make_training_data(synthetic(DynKind::Bio, 15, 60, 1.0, 0, 1, 8));
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.learning_rate = 0.05;
  const auto r = train<KanNet>(data, cfg);
  double best = INFINITY;
  for (const auto& h : r.history) best = std::min(best, h.val_mae);
  CHECK(r.best_val_mae <= best);
  CHECK(model_mae(r.model, data, data.val) == r.best_val_mae);

  cfg.patience = 2;
  cfg.learning_rate = 0.0;
  const auto stopped = train<KanNet>(data, cfg);
  CHECK(stopped.history.size() == 2);
  CHECK(stopped.best_epoch == 0);
}

TEST_CASE("non-finite loss aborts with the epoch") {
  Dataset ds = synthetic(DynKind::Bio, 8, 20, 1.0, 0, 1, 2);
  TrainingData data = make_training_data(ds);
  data.targets[data.stride() * data.train[3]] = NAN;
  TrainConfig cfg;
  cfg.epochs = 3;
  try {
    train<KanNet>(data, cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.epoch() == 1);
  }
}

TEST_CASE("grid search") {
  const TrainingData data = make_training_data(synthetic(DynKind::Kur, 15, 80, 1.0, 0, 2 * std::numbers::pi, 4));
  TrainConfig base;
  base.epochs = 8;
  base.range = 10.0;

  const auto one = grid_search<KanNet>({base}, data);
  CHECK(one.best == 0);
  CHECK(one.rows.size() == 1);

  TrainConfig frozen = base;
  frozen.learning_rate = 0.0;
  const auto two = grid_search<KanNet>({frozen, base}, data);
  CHECK(two.best == 1);

  std::vector<TrainConfig> grid;
  for (double lr : {0.003, 0.02})
    for (int g : {5, 8})
      for (std::size_t w : {2u, 3u}) {
        TrainConfig c = base;
        c.learning_rate = lr;
        c.grid = g;
        c.g_hidden = {w};
        c.seed = grid.size();
        grid.push_back(c);
      }
  REQUIRE(grid.size() == 8);
  const auto res = grid_search<KanNet>(grid, data);
  const auto path = std::filesystem::temp_directory_path() / "graphdyn_grid.csv";
  write_grid_csv(path, res.rows, "abc123");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "config_hash,index,config,val_mae,best_epoch,parameter_count,status");
  double selected = NAN;
  std::vector<double> all;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 7);
    CHECK(cells[0] == "abc123");
    const double v = std::stod(cells[3]);
    all.push_back(v);
    if (std::stoul(cells[1]) == res.best) selected = v;
  }
  REQUIRE(all.size() == 8);
  for (double v : all) CHECK(selected <= v);

  const auto sub = grid_search<KanNet>(grid, data, 3, 9);
  CHECK(sub.rows.size() == 3);
  CHECK_THROWS_AS(grid_search<KanNet>({}, data), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.batch_size = 0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "batch_size");
  }
  c = TrainConfig{};
  c.degree = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.backend = Backend::Mlp;
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const TrainingData data = make_training_data(synthetic(DynKind::Bio, 8, 20, 1.0, 0, 1, 2));
  CHECK_THROWS_AS(train<MlpNet>(data, TrainConfig{}), ConfigError);
}

TEST_CASE("model checkpoints and parameter counts") {
  TrainConfig cfg;
  cfg.grid = 7;
  cfg.degree = 2;
  cfg.h_hidden = {3};
  cfg.g_hidden = {4};
  const auto m = make_model<KanNet>(cfg, 1);
  CHECK(m.parameter_count() == (1 * 3 + 3 * 1 + 2 * 4 + 4 * 1) * (7 + 2 + 2));
  const auto text = model_to_json(m);
  CHECK(checkpoint_backend(text) == Backend::Kan);
  const auto back = model_from_json<KanNet>(text);
  CHECK(back.h == m.h);
  CHECK(back.g == m.g);
  CHECK_THROWS_AS(model_from_json<MlpNet>(text), FormatError);

  cfg.backend = Backend::Mlp;
  cfg.mlp_hidden = {16, 8};
  const auto mm = make_model<MlpNet>(cfg, 1);
  CHECK(mm.h.parameter_count() == (1 * 16 + 16) + (16 * 8 + 8) + (8 * 1 + 1));
  const auto mback = model_from_json<MlpNet>(model_to_json(mm));
  CHECK(mback.g == mm.g);
}
