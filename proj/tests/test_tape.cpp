#include <gtest/gtest.h>

#include <cstring>

#include "support/gradcheck.hpp"
#include "umbra/mlp.hpp"
#include "umbra/param_set.hpp"
#include "umbra/rng.hpp"
#include "umbra/tape.hpp"

using namespace umbra;
using testsupport::central_diff;
using testsupport::max_rel_error;

TEST(Tape, AddForward) {
    Tape t;
    auto x = t.leaf(Tensor::vector({1, 2}));
    auto y = t.leaf(Tensor::vector({3, 4}));
    auto z = t.add(x, y);
    EXPECT_EQ(t.val(z)[0], 4.0);
    EXPECT_EQ(t.val(z)[1], 6.0);
}

TEST(Tape, MatmulSelectsRowsWithIdentityPadding) {
    Tape t;
    auto w = t.leaf(Tensor({2, 3}, {1, 0, 0, 0, 1, 0}));
    auto v = t.leaf(Tensor::vector({5, 7, 9}));
    auto z = t.matmul(w, v);
    ASSERT_EQ(t.val(z).shape(), (std::vector<int>{2}));
    EXPECT_EQ(t.val(z)[0], 5.0);
    EXPECT_EQ(t.val(z)[1], 7.0);
}

TEST(Tape, TanhAtZero) {
    Tape t;
    auto x = t.leaf(Tensor::vector({0}));
    EXPECT_EQ(t.val(t.tanh(x))[0], 0.0);
}

TEST(Tape, ShapeMismatchNamesOpAndShapes) {
    Tape t;
    auto x = t.leaf(Tensor::vector({1, 2}));
    auto y = t.leaf(Tensor::vector({1, 2, 3}));
    try {
        t.add(x, y);
        FAIL() << "expected shape error";
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("(2)"), std::string::npos);
        EXPECT_NE(msg.find("(3)"), std::string::npos);
    }
}

TEST(Tape, BackwardOfSumOfSquares) {
    Tape t;
    auto x = t.leaf(Tensor::vector({1, 2, 3}), true);
    auto root = t.sum(t.mul(x, x));
    t.backward(root);
    const Tensor g = t.grad(x);
    EXPECT_DOUBLE_EQ(g[0], 2.0);
    EXPECT_DOUBLE_EQ(g[1], 4.0);
    EXPECT_DOUBLE_EQ(g[2], 6.0);
    EXPECT_DOUBLE_EQ(t.grad(root)[0], 1.0);
}

TEST(Tape, BackwardTanhOfDotAtZeroWeights) {
    Tape t;
    auto w = t.leaf(Tensor::vector({0, 0, 0}), true);
    auto x = t.leaf(Tensor::vector({0.5, -1.25, 2.0}));
    auto root = t.tanh(t.sum(t.mul(w, x)));
    t.backward(root);
    const Tensor g = t.grad(w);
    EXPECT_DOUBLE_EQ(g[0], 0.5);
    EXPECT_DOUBLE_EQ(g[1], -1.25);
    EXPECT_DOUBLE_EQ(g[2], 2.0);
}

TEST(Tape, NonScalarRootThrows) {
    Tape t;
    auto x = t.leaf(Tensor::vector({1, 2}), true);
    EXPECT_THROW(t.backward(x), std::invalid_argument);
}

// d/dx of each remaining primitive against central differences.
TEST(Tape, PrimitiveGradientsMatchFiniteDifferences) {
    auto run = [](const std::function<NodeId(Tape&, NodeId)>& build,
                  std::vector<double> at) {
        auto eval = [&](const std::vector<double>& v) {
            Tape t;
            auto x = t.leaf(Tensor::vector(v), true);
            return t.val(build(t, x)).item();
        };
        Tape t;
        auto x = t.leaf(Tensor::vector(at), true);
        auto root = build(t, x);
        t.backward(root);
        const Tensor g = t.grad(x);
        std::vector<double> analytic(g.data(), g.data() + g.numel());
        return max_rel_error(analytic, central_diff(eval, at));
    };

    // relu probed away from the kink
    EXPECT_LT(run([](Tape& t, NodeId x) { return t.sum(t.relu(x)); }, {0.7, -0.9, 1.4}), 1e-7);
    EXPECT_LT(run([](Tape& t, NodeId x) { return t.sum(t.square(x)); }, {0.3, -1.1}), 1e-7);
    EXPECT_LT(run([](Tape& t, NodeId x) { return t.sum(t.sqrt_eps(t.square(x), 0.5)); },
                  {0.4, 1.7}),
              1e-7);
    EXPECT_LT(run([](Tape& t, NodeId x) { return t.mean(t.tanh(x)); }, {0.2, -0.6, 1.0}), 1e-7);
    EXPECT_LT(run([](Tape& t, NodeId x) { return t.sum(t.scalar_mul(x, -2.5)); }, {1.0, 2.0}),
              1e-7);
    EXPECT_LT(run(
                  [](Tape& t, NodeId x) {
                      auto d = t.leaf(Tensor::vector({2.0, -1.5}));
                      return t.sum(t.div(x, d));
                  },
                  {0.8, 0.9}),
              1e-7);
    EXPECT_LT(run(
                  [](Tape& t, NodeId x) {
                      auto y = t.leaf(Tensor::vector({-0.3, 0.9}));
                      return t.sum(t.sub(t.mul(x, y), y));
                  },
                  {0.8, 0.9}),
              1e-7);
    EXPECT_LT(run(
                  [](Tape& t, NodeId x) {
                      auto c = t.slice_cols(t.concat_cols(x, t.square(x)), 1, 3);
                      return t.sum(c);
                  },
                  {0.8, 0.9}),
              1e-7);
}

TEST(Tape, MatrixPrimitivesMatchFiniteDifferences) {
    // batch (2,3) input through bias_add / scale_cols / matmul
    const std::vector<double> x0{0.5, -0.2, 0.8, 1.1, 0.3, -0.7};
    const std::vector<double> w0{0.4, -0.6, 0.9, 0.1, -0.3, 0.5};  // (3,2)
    const std::vector<double> b0{0.2, -0.1};

    Tape t;
    auto x = t.leaf(Tensor({2, 3}, x0), true);
    auto w = t.leaf(Tensor({3, 2}, w0), true);
    auto b = t.leaf(Tensor::vector(b0), true);
    auto scale = t.leaf(Tensor::vector({1.5, -2.0}), true);
    auto root = t.sum(t.tanh(t.scale_cols(t.bias_add(t.matmul(x, w), b), scale)));
    t.backward(root);

    // flatten (x, w, b, scale) and FD through a rebuilt tape
    std::vector<double> flat;
    for (double v : x0) flat.push_back(v);
    for (double v : w0) flat.push_back(v);
    for (double v : b0) flat.push_back(v);
    flat.push_back(1.5);
    flat.push_back(-2.0);
    auto f = [&](const std::vector<double>& v) {
        Tape tt;
        auto xx = tt.leaf(Tensor({2, 3}, {v.begin(), v.begin() + 6}));
        auto ww = tt.leaf(Tensor({3, 2}, {v.begin() + 6, v.begin() + 12}));
        auto bb = tt.leaf(Tensor::vector({v[12], v[13]}));
        auto ss = tt.leaf(Tensor::vector({v[14], v[15]}));
        return tt.val(tt.sum(tt.tanh(tt.scale_cols(tt.bias_add(tt.matmul(xx, ww), bb), ss)))).item();
    };
    std::vector<double> analytic;
    for (auto id : {x, w, b, scale}) {
        const Tensor g = t.grad(id);
        analytic.insert(analytic.end(), g.data(), g.data() + g.numel());
    }
    EXPECT_LT(max_rel_error(analytic, central_diff(f, flat)), 1e-6);
}

// Random same-shape composition chains up to depth 50, checked against FD.
TEST(Tape, RandomDeepGraphsMatchFiniteDifferences) {
    enum Kind { kAdd, kSub, kMul, kTanh, kSquareShrink, kScalarMul, kSqrtEps, kDivSafe };
    struct Step {
        Kind kind;
        int a, b;
    };

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(900 + seed);
        const int dim = 3;
        const int depth = 5 + static_cast<int>(rng.uniform_int(46));  // up to ~50
        std::vector<Step> steps;
        for (int d = 0; d < depth; ++d) {
            const int pool = 2 + d;
            Step s;
            s.kind = static_cast<Kind>(rng.uniform_int(8));
            s.a = static_cast<int>(rng.uniform_int(pool));
            s.b = static_cast<int>(rng.uniform_int(pool));
            steps.push_back(s);
        }

        auto build = [&](Tape& t, const std::vector<double>& v) {
            std::vector<NodeId> pool;
            pool.push_back(t.leaf(Tensor::vector({v[0], v[1], v[2]}), true));
            pool.push_back(t.leaf(Tensor::vector({v[3], v[4], v[5]}), true));
            for (const Step& s : steps) {
                NodeId a = pool[s.a], b = pool[s.b];
                NodeId r = -1;
                switch (s.kind) {
                    case kAdd: r = t.add(a, b); break;
                    case kSub: r = t.sub(a, b); break;
                    case kMul: r = t.scalar_mul(t.mul(a, b), 0.5); break;
                    case kTanh: r = t.tanh(a); break;
                    case kSquareShrink: r = t.scalar_mul(t.square(a), 0.25); break;
                    case kScalarMul: r = t.scalar_mul(a, -0.8); break;
                    case kSqrtEps: r = t.sqrt_eps(t.square(a), 0.3); break;
                    case kDivSafe: r = t.div(a, t.sqrt_eps(t.square(b), 1.0)); break;
                }
                pool.push_back(r);
            }
            return t.mean(t.tanh(pool.back()));
        };

        std::vector<double> at;
        for (int i = 0; i < 2 * dim; ++i) at.push_back(rng.uniform(-1.2, 1.2));

        Tape t;
        std::vector<NodeId> leaves;
        auto root = [&] {
            std::vector<NodeId> pool;
            pool.push_back(t.leaf(Tensor::vector({at[0], at[1], at[2]}), true));
            pool.push_back(t.leaf(Tensor::vector({at[3], at[4], at[5]}), true));
            leaves = pool;
            for (const Step& s : steps) {
                NodeId a = pool[s.a], b = pool[s.b];
                NodeId r = -1;
                switch (s.kind) {
                    case kAdd: r = t.add(a, b); break;
                    case kSub: r = t.sub(a, b); break;
                    case kMul: r = t.scalar_mul(t.mul(a, b), 0.5); break;
                    case kTanh: r = t.tanh(a); break;
                    case kSquareShrink: r = t.scalar_mul(t.square(a), 0.25); break;
                    case kScalarMul: r = t.scalar_mul(a, -0.8); break;
                    case kSqrtEps: r = t.sqrt_eps(t.square(a), 0.3); break;
                    case kDivSafe: r = t.div(a, t.sqrt_eps(t.square(b), 1.0)); break;
                }
                pool.push_back(r);
            }
            return t.mean(t.tanh(pool.back()));
        }();
        t.backward(root);
        std::vector<double> analytic;
        for (auto id : leaves) {
            const Tensor g = t.grad(id);
            analytic.insert(analytic.end(), g.data(), g.data() + g.numel());
        }
        auto f = [&](const std::vector<double>& v) {
            Tape tt;
            return tt.val(build(tt, v)).item();
        };
        EXPECT_LT(max_rel_error(analytic, central_diff(f, at)), 1e-5) << "seed " << seed;
    }
}

TEST(Tape, AdjointAccumulationIsLinear) {
    const double a = 0.75, b = -1.5;
    Rng rng(41);
    std::vector<double> xv;
    for (int i = 0; i < 4; ++i) xv.push_back(rng.uniform(-1, 1));

    auto make = [&](Tape& t, NodeId x) {
        NodeId f = t.mean(t.tanh(t.square(x)));
        NodeId g = t.sum(t.mul(x, t.tanh(x)));
        return std::pair{f, g};
    };

    Tape t1;
    auto x1 = t1.leaf(Tensor::vector(xv), true);
    auto [f1, g1] = make(t1, x1);
    t1.backward(t1.add(t1.scalar_mul(f1, a), t1.scalar_mul(g1, b)));
    const Tensor combined = t1.grad(x1);

    Tape t2;
    auto x2 = t2.leaf(Tensor::vector(xv), true);
    auto [f2, g2] = make(t2, x2);
    t2.backward(f2);
    const Tensor gf = t2.grad(x2);

    Tape t3;
    auto x3 = t3.leaf(Tensor::vector(xv), true);
    auto [f3, g3] = make(t3, x3);
    t3.backward(g3);
    const Tensor gg = t3.grad(x3);

    for (std::size_t i = 0; i < combined.numel(); ++i)
        EXPECT_NEAR(combined[i], a * gf[i] + b * gg[i], 1e-12);
}

TEST(Tape, BackwardIsDeterministic) {
    auto run = [] {
        Tape t;
        auto x = t.leaf(Tensor::vector({0.3, -0.9, 1.7}), true);
        auto w = t.leaf(Tensor({3, 3}, {0.5, -0.25, 0.11, 0.9, 0.44, -0.6, 0.05, 1.2, -0.33}), true);
        auto root = t.mean(t.tanh(t.matmul(w, t.tanh(x))));
        t.backward(root);
        auto g1 = t.grad(x), g2 = t.grad(w);
        std::vector<double> out(g1.data(), g1.data() + g1.numel());
        out.insert(out.end(), g2.data(), g2.data() + g2.numel());
        return out;
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double)));
}

// The reverse sweep must finish all consumers of a node before that node is
// processed. Consumers always have larger ids, so the recorded processing
// order must be strictly decreasing.
TEST(Tape, BackwardProcessesConsumersFirst) {
    Tape t;
    std::vector<NodeId> trace;
    t.set_backward_trace(&trace);
    auto x = t.leaf(Tensor::vector({0.4, 0.8}), true);
    auto s = t.square(x);
    auto u = t.tanh(s);
    auto v = t.mul(s, u);           // diamond: s feeds both u and v
    auto root = t.sum(t.add(v, s)); // and s feeds the root a third time
    t.backward(root);
    ASSERT_FALSE(trace.empty());
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GT(trace[i - 1], trace[i]);
    // s must be processed only after u, v, and the add that consume it
    auto pos = [&](NodeId id) {
        return std::find(trace.begin(), trace.end(), id) - trace.begin();
    };
    EXPECT_GT(pos(s), pos(u));
    EXPECT_GT(pos(s), pos(v));
}

TEST(Mlp, ZeroParamsGiveZeroOutput) {
    MlpSpec spec{{3, 8, 2}, Activation::Tanh};
    ParamSet ps;
    ps.add("W0", Tensor({3, 8}));
    ps.add("b0", Tensor({8}));
    ps.add("W1", Tensor({8, 2}));
    ps.add("b1", Tensor({2}));
    const Tensor out = mlp_forward(spec, ps, Tensor::vector({1.0, -2.0, 3.0}));
    EXPECT_EQ(out[0], 0.0);
    EXPECT_EQ(out[1], 0.0);
}

TEST(Mlp, SingleIdentityLayerIsIdentity) {
    MlpSpec spec{{3, 3}, Activation::Tanh};
    ParamSet ps;
    ps.add("W0", Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    ps.add("b0", Tensor({3}));
    const Tensor in = Tensor::vector({0.5, -1.5, 2.5});
    const Tensor out = mlp_forward(spec, ps, in);
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], in[i]);
}

// Independent neuron-by-neuron reference forward pass, different loop
// structure from the library kernel.
static std::vector<double> reference_forward(const MlpSpec& spec, const ParamSet& ps,
                                             std::vector<double> h) {
    for (int l = 0; l < spec.layers(); ++l) {
        const Tensor& W = ps[weight_name(l)];
        const Tensor& b = ps[bias_name(l)];
        const int in = spec.sizes[l], out = spec.sizes[l + 1];
        std::vector<double> next(out);
        for (int j = 0; j < out; ++j) {
            double acc = b[j];
            for (int i = 0; i < in; ++i) acc += h[i] * W.at(i, j);
            next[j] = (l + 1 < spec.layers()) ? std::tanh(acc) : acc;
        }
        h = std::move(next);
    }
    return h;
}

TEST(Mlp, FixedSeedNetMatchesReferenceForward) {
    MlpSpec spec{{3, 32, 32, 2}, Activation::Tanh};
    Rng rng(7);
    ParamSet ps = init_mlp_params(spec, rng);
    const Tensor in = Tensor::vector({0.3, -0.7, 1.1});
    const Tensor out = mlp_forward(spec, ps, in);
    const auto ref = reference_forward(spec, ps, {0.3, -0.7, 1.1});
    ASSERT_EQ(out.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
}

TEST(Mlp, PlainAndTapeForwardAgreeBitExactly) {
    MlpSpec spec{{4, 16, 16, 3}, Activation::Tanh};
    Rng rng(99);
    ParamSet ps = init_mlp_params(spec, rng);
    Tensor in({2, 4}, {0.1, -0.2, 0.3, -0.4, 1.0, 2.0, -3.0, 0.5});
    const Tensor plain = mlp_forward(spec, ps, in);

    Tape t;
    auto net = mlp_to_tape(t, spec, ps, false);
    auto out = mlp_forward(t, net, t.leaf(in));
    const Tensor& taped = t.val(out);
    ASSERT_EQ(plain.numel(), taped.numel());
    EXPECT_EQ(0, std::memcmp(plain.data(), taped.data(), plain.numel() * sizeof(double)));
}

TEST(Mlp, TwoLayerGradientsMatchFiniteDifferences) {
    // the derived oracle for a random small net: rel err < 1e-6 per coordinate
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        MlpSpec spec{{2, 8, 1}, Activation::Tanh};
        Rng rng(seed);
        ParamSet ps = init_mlp_params(spec, rng);
        const std::vector<double> x0{0.7, -0.4};

        Tape t;
        auto net = mlp_to_tape(t, spec, ps, true);
        auto in = t.leaf(Tensor::vector(x0), true);
        auto root = t.sum(mlp_forward(t, net, in));
        t.backward(root);

        std::vector<double> analytic;
        for (auto id : net.weights) {
            const Tensor g = t.grad(id);
            analytic.insert(analytic.end(), g.data(), g.data() + g.numel());
        }
        for (auto id : net.biases) {
            const Tensor g = t.grad(id);
            analytic.insert(analytic.end(), g.data(), g.data() + g.numel());
        }

        auto f = [&](const std::vector<double>& v) {
            ParamSet q = ps;
            std::size_t off = 0;
            for (int l = 0; l < spec.layers(); ++l) {
                Tensor& w = q[weight_name(l)];
                for (std::size_t i = 0; i < w.numel(); ++i) w[i] = v[off++];
            }
            for (int l = 0; l < spec.layers(); ++l) {
                Tensor& b = q[bias_name(l)];
                for (std::size_t i = 0; i < b.numel(); ++i) b[i] = v[off++];
            }
            return mlp_forward(spec, q, Tensor::vector(x0)).item();
        };
        std::vector<double> flat;
        for (int l = 0; l < spec.layers(); ++l) {
            const Tensor& w = ps[weight_name(l)];
            flat.insert(flat.end(), w.data(), w.data() + w.numel());
        }
        for (int l = 0; l < spec.layers(); ++l) {
            const Tensor& b = ps[bias_name(l)];
            flat.insert(flat.end(), b.data(), b.data() + b.numel());
        }
        EXPECT_LT(max_rel_error(analytic, central_diff(f, flat)), 1e-6) << "seed " << seed;
    }
}

TEST(ParamSet, FlattenUnflattenRoundTripsBitExactly) {
    Rng rng(5);
    MlpSpec spec{{3, 5, 2}, Activation::Tanh};
    ParamSet ps = init_mlp_params(spec, rng);
    const auto flat = ps.flatten();
    ParamSet copy = ps;
    for (std::size_t i = 0; i < copy.size(); ++i)
        for (std::size_t j = 0; j < copy.tensor(i).numel(); ++j) copy.tensor(i)[j] = 0.0;
    copy.unflatten(flat);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Tensor& a = ps.tensor(i);
        const Tensor& b = copy.tensor(i);
        ASSERT_EQ(0, std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)));
    }
}

TEST(ParamSet, SaveLoadRoundTripsBitExactly) {
    Rng rng(11);
    MlpSpec spec{{4, 6, 3}, Activation::Tanh};
    ParamSet ps = init_mlp_params(spec, rng);
    const std::string path = ::testing::TempDir() + "roundtrip.params";
    ps.save(path);
    ParamSet loaded = ParamSet::load(path);
    ASSERT_EQ(loaded.size(), ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        EXPECT_EQ(loaded.name(i), ps.name(i));
        ASSERT_EQ(loaded.tensor(i).shape(), ps.tensor(i).shape());
        ASSERT_EQ(0, std::memcmp(loaded.tensor(i).data(), ps.tensor(i).data(),
                                 ps.tensor(i).numel() * sizeof(double)));
    }
}

TEST(ParamSet, LoadRejectsWrongMagicAndMissingFile) {
    const std::string path = ::testing::TempDir() + "not_params.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "junk data";
    }
    EXPECT_THROW(ParamSet::load(path), std::runtime_error);
    EXPECT_THROW(ParamSet::load(::testing::TempDir() + "does_not_exist.params"),
                 std::runtime_error);
}

TEST(ParamSet, CopyValuesChecksShapes) {
    ParamSet a, b;
    a.add("W0", Tensor({2, 2}));
    b.add("W0", Tensor({2, 3}));
    EXPECT_THROW(a.copy_values_from(b), std::invalid_argument);
}

TEST(Tape, SeededBackwardMatchesSingleTape) {
    // f(x) = mean(tanh(x)); z = 3 * f. Single tape vs f-tape seeded with dz/df.
    const std::vector<double> xv{0.2, -0.8, 1.3};
    Tape single;
    auto xs = single.leaf(Tensor::vector(xv), true);
    auto zs = single.scalar_mul(single.mean(single.tanh(xs)), 3.0);
    single.backward(zs);
    const Tensor want = single.grad(xs);

    Tape part;
    auto xp = part.leaf(Tensor::vector(xv), true);
    auto fp = part.mean(part.tanh(xp));
    part.backward_seeded(fp, Tensor::scalar(3.0));
    const Tensor got = part.grad(xp);
    for (std::size_t i = 0; i < want.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-15);
}
