// Regenerates the 64-bit reference fixtures under tests/data.
//
//   dit_make_golden <out-dir>

#include <cstdio>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "dit/diffusion.hpp"
#include "dit/model.hpp"
#include "dit/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace dit;

namespace {

constexpr std::uint64_t kParamSeed = 7;
constexpr double kPerturbation = 0.1;

void forward_fixture(const fs::path& out) {
  TensorArchive ar;
  KeyedRng rng({2024, static_cast<std::uint64_t>(Stream::kFixture)});
  const auto z = Tensor<double>::randn({2, 8, 8, 2}, rng);
  const std::vector<double> t{37.0, 912.0};
  const std::vector<std::int64_t> labels{1, kNullLabel};
  ar.put("z", z);
  ar.put_f64("t", {2}, t);
  ar.put_i64("labels", {2}, labels);
  nlohmann::json meta = {{"param_seed", kParamSeed}, {"perturbation", kPerturbation}, {"variants", nlohmann::json::array()}};
  for (auto v : all_variants()) {
    const auto config = mini_config(v);
    auto params = init_parameters<double>(config, kParamSeed);
    perturb_parameters(params, kParamSeed, kPerturbation);
    const auto y = forward(config, params, z, t, labels);
    const std::string name(variant_name(v));
    ar.put(name + "/eps", y.eps);
    ar.put(name + "/v", y.v);
    meta["variants"].push_back(name);
  }
  ar.metadata = meta.dump();
  ar.save(out);
}

void loss_fixture(const fs::path& out) {
  TensorArchive ar;
  KeyedRng rng({2025, static_cast<std::uint64_t>(Stream::kFixture)});
  const auto schedule = DiffusionSchedule::standard();
  const Shape shape{4, 8, 8, 2};
  const auto x0 = Tensor<double>::randn(shape, rng);
  const auto eps = Tensor<double>::randn(shape, rng);
  const auto eps_hat = Tensor<double>::randn(shape, rng, 1.1);
  const auto v = Tensor<double>::randn(shape, rng, 0.5);
  const std::vector<int> t{1, 10, 500, 1000};
  const auto xt = q_sample(schedule, x0, t, eps);
  const auto loss = hybrid_loss(schedule, eps_hat, v, eps, x0, xt, t);
  ar.put("x0", x0);
  ar.put("eps", eps);
  ar.put("eps_hat", eps_hat);
  ar.put("v", v);
  ar.put("xt", xt);
  ar.put_i64("t", {4}, std::vector<std::int64_t>(t.begin(), t.end()));
  const double values[] = {loss.total.item(), loss.mse, loss.vlb};
  ar.put_f64("loss", {3}, values);
  ar.metadata = R"({"loss":["total","mse","vlb"],"schedule":"linear 1000 1e-4 2e-2"})";
  ar.save(out);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: dit_make_golden <out-dir>\n");
    return 2;
  }
  const fs::path dir = argv[1];
  fs::create_directories(dir);
  forward_fixture(dir / "golden_forward.ditt");
  loss_fixture(dir / "golden_hybrid_loss.ditt");
  std::printf("wrote %s and %s\n", (dir / "golden_forward.ditt").c_str(), (dir / "golden_hybrid_loss.ditt").c_str());
  return 0;
}
