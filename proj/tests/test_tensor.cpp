#include "doctest.h"

#include "resdistill/ops.hpp"
#include "resdistill/tensor.hpp"

using namespace resdistill;

TEST_CASE("tensor construction and invariants") {
    auto t = make_tensor<double>({2, 3});
    CHECK(t->numel() == 6);
    CHECK(t->shape == std::vector<int>{2, 3});
    CHECK_FALSE(t->requires_grad);

    auto v = make_tensor<double>({2, 2}, {1, 2, 3, 4});
    CHECK(v->data[3] == 4);

    CHECK_THROWS_AS(make_tensor<double>({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(make_tensor<double>({0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(make_tensor<double>({-1}), std::invalid_argument);

    auto g = make_tensor<double>({3}, {1, 2, 3}, true);
    CHECK(g->grad.size() == g->data.size());
}

TEST_CASE("backward requires a scalar loss") {
    auto x = make_tensor<double>({2}, {1, 2}, true);
    auto y = relu(x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("sum of squares gradient is 2x") {
    auto x = make_tensor<double>({4}, {0.5, -1.25, 2.0, 3.5}, true);
    auto zeros = make_tensor<double>({4});
    auto loss = scale(mse_loss(x, zeros), 4.0); // N * mean((x-0)^2) = sum x^2
    backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(2.0 * x->data[i]).epsilon(1e-12));
}

TEST_CASE("gradients accumulate additively until cleared") {
    auto x = make_tensor<double>({2}, {1.0, 2.0}, true);
    auto zeros = make_tensor<double>({2});
    for (int rep = 0; rep < 3; ++rep) {
        auto loss = scale(mse_loss(x, zeros), 2.0);
        backward(loss);
    }
    CHECK(x->grad[0] == doctest::Approx(3 * 2.0 * 1.0));
    CHECK(x->grad[1] == doctest::Approx(3 * 2.0 * 2.0));
    x->clear_grad();
    CHECK(x->grad[0] == 0.0);
}

TEST_CASE("backward seed scales the gradient") {
    auto x = make_tensor<double>({2}, {1.0, -3.0}, true);
    auto zeros = make_tensor<double>({2});
    auto loss = scale(mse_loss(x, zeros), 2.0);
    backward(loss, 0.25);
    CHECK(x->grad[0] == doctest::Approx(0.25 * 2.0 * 1.0));
    CHECK(x->grad[1] == doctest::Approx(0.25 * 2.0 * -3.0));
}

TEST_CASE("node reused twice in a graph receives both contributions") {
    auto x = make_tensor<double>({2}, {1.0, 2.0}, true);
    auto y = add(x, x); // y = 2x
    auto zeros = make_tensor<double>({2});
    auto loss = scale(mse_loss(y, zeros), 2.0); // sum (2x)^2 -> d/dx = 8x
    backward(loss);
    CHECK(x->grad[0] == doctest::Approx(8.0 * 1.0));
    CHECK(x->grad[1] == doctest::Approx(8.0 * 2.0));
}

TEST_CASE("detach cuts the graph") {
    auto x = make_tensor<double>({2}, {1.0, 2.0}, true);
    auto y = relu(x);
    y->detach();
    auto zeros = make_tensor<double>({2});
    auto loss = mse_loss(y, zeros);
    backward(loss);
    CHECK(x->grad[0] == 0.0);
    CHECK(x->grad[1] == 0.0);
}

TEST_CASE("untracked inputs build no graph") {
    auto x = make_tensor<double>({2, 2}, {1, 2, 3, 4}); // requires_grad false
    auto y = relu(x);
    CHECK(y->parents.empty());
    CHECK_FALSE(bool(y->backward_fn));
    CHECK_FALSE(y->requires_grad);
}
