#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "atomflex/errors.hpp"
#include "atomflex/optim.hpp"
#include "support/test_util.hpp"

using namespace atomflex;

TEST_CASE("glorot init is seed-deterministic and bounded") {
    Tensor a = glorot_init(100, 100, 7);
    Tensor b = glorot_init(100, 100, 7);
    REQUIRE(a.values() == b.values());
    const double bound = std::sqrt(6.0 / 200.0);
    for (Real v : a.values()) {
        REQUIRE(v >= -bound);
        REQUIRE(v <= bound);
    }
}

TEST_CASE("glorot sample mean is within 3 standard errors of zero") {
    Tensor t = glorot_init(1000, 1000, 3);
    double mean = 0;
    for (Real v : t.values()) mean += v;
    mean /= static_cast<double>(t.numel());
    const double bound = std::sqrt(6.0 / 2000.0);
    const double se = bound / std::sqrt(3.0 * 1e6);  // Var of U(-b, b) = b^2 / 3
    REQUIRE(std::abs(mean) < 3.0 * se);
}

TEST_CASE("parameter store enforces unique names and missing-name errors") {
    ParameterStore store;
    store.create("w", 2, 2);
    REQUIRE_THROWS_AS(store.create("w", 1, 1), ContractError);
    REQUIRE_THROWS_AS(store.get("nope"), ContractError);
    REQUIRE(store.contains("w"));
}

TEST_CASE("buffers are excluded from the trainable parameter count") {
    ParameterStore store;
    store.create("w", 3, 4);
    store.create_buffer("running_mean", 1, 4);
    REQUIRE(store.total_parameters() == 12);
    REQUIRE(store.is_buffer("running_mean"));
    REQUIRE(!store.is_buffer("w"));
}

TEST_CASE("adamw with zero gradient and zero decay is a fixed point") {
    ParameterStore store;
    Tensor& w = store.create("w", 2, 3);
    for (auto& v : w.values()) v = 1.25;
    w.grad_mut();  // zeros
    OptimizerConfig cfg;
    cfg.learning_rate = 0.001;
    store.adamw_step(cfg);
    for (Real v : w.values()) REQUIRE(v == 1.25);
}

TEST_CASE("decoupled decay applies exactly lr*lambda*w on a zero-gradient step") {
    ParameterStore store;
    Tensor& w = store.create("w", 1, 1);
    w.values()[0] = 1.0;
    w.grad_mut();
    OptimizerConfig cfg;
    cfg.learning_rate = 0.0008;
    cfg.weight_decay = 0.0002;
    store.adamw_step(cfg);
    REQUIRE_THAT(w.values()[0],
                 Catch::Matchers::WithinAbs(1.0 - 0.0008 * 0.0002, 1e-15));
}

TEST_CASE("one adamw step with unit gradient matches the hand recurrence") {
    ParameterStore store;
    Tensor& w = store.create("w", 2, 2);
    for (auto& v : w.values()) v = 0.5;
    for (auto& g : w.grad_mut()) g = 1.0;
    OptimizerConfig cfg;
    cfg.learning_rate = 0.0008;
    cfg.epsilon = 1.3e-9;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.weight_decay = 0.0002;
    store.adamw_step(cfg);
    // Hand evaluation: m=0.1, v=0.001, mhat=1, vhat=1.
    const double decayed = 0.5 - 0.0008 * 0.0002 * 0.5;
    const double expected = decayed - 0.0008 * (1.0 / (1.0 + 1.3e-9));
    for (Real v : w.values()) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(expected, 1e-12));
    REQUIRE(store.step_count() == 1);
    REQUIRE(!store.get("w").has_grad());  // gradients cleared
}

TEST_CASE("adamw rejects a parameter with missing gradient") {
    ParameterStore store;
    store.create("w", 1, 1);
    OptimizerConfig cfg;
    REQUIRE_THROWS_AS(store.adamw_step(cfg), ContractError);
}

TEST_CASE("optimizer config validation") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0;
    REQUIRE_THROWS_AS(cfg.validate(), ContractError);
    cfg = OptimizerConfig{};
    cfg.beta1 = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), ContractError);
    cfg = OptimizerConfig{};
    cfg.weight_decay = -0.1;
    REQUIRE_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("two adamw steps follow the bias-corrected trajectory") {
    ParameterStore store;
    Tensor& w = store.create("w", 1, 1);
    w.values()[0] = 1.0;
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epsilon = 1e-8;

    double m = 0, v = 0, ref = 1.0;
    for (int t = 1; t <= 2; ++t) {
        const double g = t == 1 ? 0.3 : -0.2;
        w.grad_mut()[0] = g;
        store.adamw_step(cfg);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1 - std::pow(0.9, t));
        const double vhat = v / (1 - std::pow(0.999, t));
        ref -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
        REQUIRE_THAT(w.values()[0], Catch::Matchers::WithinAbs(ref, 1e-14));
    }
}
