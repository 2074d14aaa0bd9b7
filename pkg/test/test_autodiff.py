# -*- coding: utf-8 -*-
import os
import unittest

import numpy as np

from cmolink import autodiff
from cmolink.autodiff import (_NODE_TYPES, Activation, Adam, BatchNorm, ComplexTensor, Conv1x1, Dense,
                              Graph, LayerNorm, MultiHeadAttention, Reshape, Tensor, UnitPower,
                              complex_solve, no_grad, transformer_block)
from cmolink.errors import ConfigError, GraphStateError, NumericalError, ShapeError, ZeroVectorError

from .utils import BaseTest, numeric_gradient, random_complex


class TestTensor(BaseTest):

    def test_elementwise_gradient(self):
        w = self.rng.standard_normal((3, 2))
        c = self.rng.standard_normal(2)

        def value(x):
            t = Tensor(x, requires_grad=True)
            return ((t @ Tensor(w)).softplus() * c).sum() + (t * t).mean().sqrt()

        x = self.rng.standard_normal((4, 3))
        t = Tensor(x, requires_grad=True)
        out = ((t @ Tensor(w)).softplus() * c).sum() + (t * t).mean().sqrt()
        out.backward()
        self.assertAllClose(t.grad, numeric_gradient(lambda a: float(value(a).data), x), rtol=1e-5, atol=1e-7)

    def test_softmax_and_log_softmax(self):
        x = self.rng.standard_normal((5, 4))
        onehot = np.eye(4)[[0, 1, 2, 3, 0]]

        def value(a):
            return float((Tensor(a).log_softmax() * onehot).sum().data)

        t = Tensor(x, requires_grad=True)
        (t.log_softmax() * onehot).sum().backward()
        self.assertAllClose(t.grad, numeric_gradient(value, x), rtol=1e-5, atol=1e-7)
        self.assertAllClose(Tensor(x).softmax().data.sum(axis=-1), np.ones(5))

    def test_broadcast_gradient(self):
        bias = Tensor(np.zeros(3), requires_grad=True)
        (Tensor(np.ones((4, 3))) + bias).sum().backward()
        self.assertAllClose(bias.grad, np.full(3, 4.0))

    def test_sign_straight_through(self):
        t = Tensor([-2.0, -0.5, 0.0, 0.5, 2.0], requires_grad=True)
        out = t.sign_ste()
        self.assertEqual(out.data.tolist(), [-1.0, -1.0, 1.0, 1.0, 1.0])
        out.sum().backward()
        self.assertEqual(t.grad.tolist(), [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_no_grad(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = (t * 2).sum()
        self.assertFalse(out.requires_grad)
        with self.assertRaises(GraphStateError):
            out.backward()

    def test_backward_needs_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(ShapeError):
            (t * 2).backward()


class TestComplexTensor(BaseTest):

    def test_matmul_matches_numpy(self):
        a = random_complex(self.rng, 2, 3, 4)
        b = random_complex(self.rng, 2, 4, 2)
        out = ComplexTensor.constant(a) @ ComplexTensor.constant(b)
        self.assertAllClose(out.numpy(), a @ b)
        self.assertAllClose(ComplexTensor.constant(a).H.numpy(), np.conj(np.swapaxes(a, -1, -2)))

    def test_solve(self):
        a = random_complex(self.rng, 3, 3) + 3 * np.eye(3)
        b = random_complex(self.rng, 3, 2)
        x = complex_solve(ComplexTensor.constant(a), ComplexTensor.constant(b))
        self.assertAllClose(x.numpy(), np.linalg.solve(a, b), rtol=1e-9, atol=1e-10)

    def test_solve_gradient(self):
        a = random_complex(self.rng, 3, 3) + 3 * np.eye(3)
        b_im = self.rng.standard_normal((3, 1))

        def value(re):
            return float(complex_solve(ComplexTensor.constant(a),
                                       ComplexTensor(Tensor(re), Tensor(b_im))).abs2().sum().data)

        re = self.rng.standard_normal((3, 1))
        leaf = Tensor(re, requires_grad=True)
        complex_solve(ComplexTensor.constant(a), ComplexTensor(leaf, Tensor(b_im))).abs2().sum().backward()
        self.assertAllClose(leaf.grad, numeric_gradient(value, re), rtol=1e-5, atol=1e-7)

    def test_division_by_complex_rejected(self):
        with self.assertRaises(TypeError):
            ComplexTensor.constant(np.ones(2)) / np.array([1j, 1j])


class TestGraph(BaseTest):

    def graph(self):
        return Graph([Dense(3, 4), autodiff.Activation("relu"), Dense(4, 2)], (3,), name="g", seed=5)

    def test_counts(self):
        g = self.graph()
        self.assertEqual(g.count_parameters(), 3 * 4 + 4 + 4 * 2 + 2)
        self.assertEqual(g.count_flops(), 2 * 3 * 4 + 2 * 4 * 2)
        self.assertEqual(g.output_shape, (2,))

    def test_deterministic_init(self):
        x = self.rng.standard_normal((6, 3))
        self.assertAllClose(self.graph().predict(x), self.graph().predict(x))

    def test_backward_matches_numeric(self):
        g = self.graph()
        x = self.rng.standard_normal((6, 3))
        weight = g.nodes[0].weight

        def value(w):
            saved = weight.data
            weight.data = w
            try:
                return float(np.sum(g.predict(x) ** 2))
            finally:
                weight.data = saved

        out = g.forward(x, "train")
        grads = g.backward(2 * out.data)
        self.assertAllClose(grads["0.dense"][0], numeric_gradient(value, weight.data), rtol=1e-5, atol=1e-7)
        self.assertEqual(g.input_grad.shape, x.shape)

    def test_backward_before_forward(self):
        with self.assertRaises(GraphStateError):
            self.graph().backward(np.ones((1, 2)))

    def test_shape_error_names_node(self):
        with self.assertRaises(ShapeError) as ex:
            self.graph().predict(np.ones((2, 5)))
        self.assertIn("Node 'input' of graph 'g'", str(ex.exception))

    def test_invalid_mode(self):
        with self.assertRaises(ConfigError):
            self.graph().forward(np.ones((2, 3)), "eval")

    def test_batchnorm_running_statistics(self):
        g = Graph([BatchNorm(2, momentum=0.0)], (2,))
        x = self.rng.standard_normal((50, 2)) * 3 + 1
        g.forward(x, "train")
        bn = g.nodes[0]
        self.assertAllClose(bn.buffers["running_mean"], x.mean(axis=0))
        self.assertAllClose(g.predict(x).mean(axis=0), np.zeros(2), atol=1e-9)

    def test_save_and_load(self):
        g = self.graph()
        path = os.path.join(self.tempdir(), "g")
        autodiff.save_graph(g, path, {"note": "x"})
        loaded = autodiff.load_graph(path)
        x = self.rng.standard_normal((4, 3))
        self.assertAllClose(loaded.predict(x), g.predict(x))
        self.assertEqual(autodiff.load_arrays(path)[1]["note"], "x")

    def test_truncated_blob(self):
        path = os.path.join(self.tempdir(), "g")
        autodiff.save_graph(self.graph(), path)
        with open(path + ".bin", "r+b") as fp:
            fp.truncate(8)
        with self.assertRaises(ConfigError):
            autodiff.load_graph(path)


class TestUnitPower(BaseTest):

    def test_batch_scope(self):
        g = Graph([UnitPower("batch")], (4,))
        out = g.forward(self.rng.standard_normal((100, 4)) * 5, "train")
        self.assertAlmostEqual(float(np.mean(np.sum(out.data ** 2, axis=-1))), 1.0)

    def test_sample_scope(self):
        g = Graph([UnitPower("sample")], (3, 2))
        out = g.predict(self.rng.standard_normal((5, 3, 2)))
        self.assertAllClose(np.mean(np.sum(out ** 2, axis=-1), axis=-1), np.ones(5))

    def test_frozen_power(self):
        g = Graph([UnitPower("batch")], (2,))
        g.nodes[0].freeze(4.0)
        self.assertAllClose(g.predict(np.array([[2.0, 0.0]])), [[1.0, 0.0]])

    def test_zero_input(self):
        g = Graph([UnitPower("batch")], (2,))
        with self.assertRaises(ZeroVectorError):
            g.predict(np.zeros((3, 2)))


def layer_cases():
    """ Small train-mode graphs that together contain every node type with a
        true gradient (the sign quantizer is straight-through). """
    return [
        Graph([Dense(3, 4)], (3,), seed=1),
        Graph([Conv1x1(3, 4)], (5, 3), seed=2),
        Graph([Dense(3, 4), Activation("relu"), Dense(4, 2)], (3,), seed=3),
        Graph([Dense(3, 4), Activation("sigmoid")], (3,), seed=4),
        Graph([Dense(3, 4), Activation("softmax")], (3,), seed=5),
        Graph([Dense(3, 4), BatchNorm(4)], (3,), seed=6),
        Graph([Dense(3, 4), LayerNorm(4)], (3,), seed=7),
        Graph([MultiHeadAttention(4, 2)], (3, 4), seed=8),
        Graph(transformer_block(4, 2), (3, 4), seed=9),
        Graph([Dense(6, 6), Reshape((3, 2)), UnitPower("sample")], (6,), seed=10),
        Graph([Dense(3, 4), UnitPower("batch")], (3,), seed=11),
    ]


class TestLayerGradients(BaseTest):

    def assertGradientClose(self, analytic, numeric, tol=1e-4):
        scale = max(float(np.max(np.abs(numeric))), 1e-8)
        self.assertLess(float(np.max(np.abs(analytic - numeric))) / scale, tol)

    def test_cases_cover_node_types(self):
        kinds = {node.kind for g in layer_cases() for node in g.iter_nodes()}
        self.assertEqual(kinds, set(_NODE_TYPES) - {"sign"})

    def test_parameters_and_input(self):
        for g in layer_cases():
            x = self.rng.standard_normal((6,) + g.input_shape)
            c = self.rng.standard_normal((6,) + g.output_shape)

            def loss(inp):
                return float(np.sum(g.forward(inp, "train").data * c))

            g.forward(x, "train")
            grads = g.backward(c)
            with self.subTest(graph=[n.kind for n in g.nodes], wrt="input"):
                self.assertGradientClose(g.input_grad, numeric_gradient(loss, x))

            for name, tensor in g.named_parameters():
                node_id = name.rsplit(".", 1)[0]
                index = [n for n, _ in g.named_parameters() if n.rsplit(".", 1)[0] == node_id].index(name)

                def value(data, tensor=tensor):
                    saved = tensor.data
                    tensor.data = data
                    try:
                        return loss(x)
                    finally:
                        tensor.data = saved

                with self.subTest(graph=[n.kind for n in g.nodes], wrt=name):
                    self.assertGradientClose(grads[node_id][index], numeric_gradient(value, tensor.data))


class TestAdam(BaseTest):

    def test_minimizes_quadratic(self):
        p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            ((p - 1.0) * (p - 1.0)).sum().backward()
            opt.step()
        self.assertAllClose(p.data, [1.0, 1.0], atol=5e-2)

    def test_state_round_trip(self):
        def run(resume):
            p = Tensor(np.array([2.0]), requires_grad=True)
            opt = Adam([p], lr=0.05)
            for i in range(10):
                if resume and i == 5:
                    state = opt.state_dict()
                    opt = Adam([p], lr=0.05)
                    opt.load_state_dict(state)
                opt.zero_grad()
                (p * p).sum().backward()
                opt.step()
            return p.data

        self.assertAllClose(run(True), run(False))

    def test_non_finite_gradient(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        with self.assertRaises(NumericalError):
            Adam([p]).step([np.array([np.nan, 0.0])])


if __name__ == '__main__':
    unittest.main()
