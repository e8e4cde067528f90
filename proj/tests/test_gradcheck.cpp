#include <doctest.h>

#include <string>
#include <vector>

#include "lftrack/gradcheck.hpp"
#include "support.hpp"

using namespace lftrack;
using test_support::rand_mat;

TEST_SUITE("gradcheck") {
  TEST_CASE("a smooth composite objective passes at a tight tolerance") {
    grad::ComponentCheck c;
    Rng rng(2);
    nn::LinearP l1 = nn::make_linear(c.ps, "l1", 3, 5, rng);
    nn::LinearP l2 = nn::make_linear(c.ps, "l2", 5, 2, rng);
    MatXd x = rand_mat<double>(rng, 4, 3);
    c.loss = [l1, l2, x](ad::Graph<double>& g, nn::ParamStore<double>& ps) {
      auto h = ad::gelu(nn::linear(ps, l1, ad::constant(g, x)));
      auto y = nn::linear(ps, l2, h);
      return ad::sum_all(ad::cmul(y, y));
    };
    grad::GradReport rep = grad::grad_check(c.loss, c.ps);
    CHECK(rep.pass);
    CHECK(rep.checked == c.ps.scalar_count());
    CHECK(rep.worst_rel < 1e-4);
  }

  TEST_CASE("a corrupted gradient is caught and attributed to its parameter") {
    grad::ComponentCheck c;
    Rng rng(3);
    nn::LinearP l1 = nn::make_linear(c.ps, "alpha", 3, 3, rng);
    nn::LinearP l2 = nn::make_linear(c.ps, "beta", 3, 1, rng);
    MatXd x = rand_mat<double>(rng, 2, 3);
    c.loss = [l1, l2, x](ad::Graph<double>& g, nn::ParamStore<double>& ps) {
      auto h = ad::sigmoid(nn::linear(ps, l1, ad::constant(g, x)));
      return ad::sum_all(nn::linear(ps, l2, h));
    };
    auto grads = grad::compute_grads(c.loss, c.ps);
    // double one parameter's gradient: the report must name exactly it
    const Index victim = c.ps.find("beta.w");
    REQUIRE(victim >= 0);
    grads[std::size_t(victim)] *= 2.0;
    grad::GradReport rep = grad::fd_compare(c.loss, c.ps, grads);
    CHECK_FALSE(rep.pass);
    REQUIRE_FALSE(rep.failures.empty());
    for (const auto& f : rep.failures) CHECK(f.name == "beta.w");
    CHECK(rep.worst_param == "beta.w");

    // additive corruption on a different parameter
    auto grads2 = grad::compute_grads(c.loss, c.ps);
    const Index victim2 = c.ps.find("alpha.b");
    grads2[std::size_t(victim2)].array() += 0.5;
    grad::GradReport rep2 = grad::fd_compare(c.loss, c.ps, grads2);
    CHECK_FALSE(rep2.pass);
    for (const auto& f : rep2.failures) CHECK(f.name == "alpha.b");
  }

  TEST_CASE("gradient list shape mismatches are rejected") {
    grad::ComponentCheck c;
    Rng rng(4);
    nn::make_linear(c.ps, "w", 2, 2, rng);
    c.loss = [](ad::Graph<double>& g, nn::ParamStore<double>& ps) {
      return ad::sum_all(nn::param(g, ps, 0));
    };
    std::vector<MatXd> grads;  // wrong count
    CHECK_THROWS_AS(grad::fd_compare(c.loss, c.ps, grads), ValidationError);
  }

  TEST_CASE("every standard component check passes") {
    for (auto& c : grad::standard_checks(1)) {
      grad::GradReport rep = grad::grad_check(c.loss, c.ps, 1e-4, c.tol);
      INFO(c.name, ": worst ", rep.worst_param, " rel ", rep.worst_rel);
      CHECK(rep.pass);
      CHECK(rep.checked == c.ps.scalar_count());
    }
  }
}
