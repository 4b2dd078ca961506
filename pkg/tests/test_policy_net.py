import numpy as np
import pytest
import torch

from bandex import policy_net as pn

from oracles import scalar_attention, scalar_encoder_layer


def rand_mask(rng, a, b, self_square=False):
    """Random blocked mask with at least one open key per query row."""
    mask = (rng.random((a, b)) < 0.5).astype(np.int64)
    if self_square:
        np.fill_diagonal(mask, 0)
    else:
        for i in range(a):
            if mask[i].all():
                mask[i, rng.integers(0, b)] = 0
    return mask


def params_of(module):
    return {k: v.detach().numpy() for k, v in module.state_dict().items()}


class TestAttention:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(40):
            a = int(rng.integers(1, 9))
            b = int(rng.integers(1, 9))
            d = int(rng.integers(2, 9))
            att = pn.SingleHeadAttention(d).double()
            h_q = rng.normal(size=(a, d))
            h_kv = rng.normal(size=(b, d))
            mask = rand_mask(rng, a, b)
            with torch.no_grad():
                out = att(torch.tensor(h_q), torch.tensor(h_kv), torch.tensor(mask))
            p = params_of(att)
            expect = scalar_attention(h_q, h_kv, p["w_q.weight"], p["w_k.weight"],
                                      p["w_v.weight"], mask)
            assert np.max(np.abs(out.numpy() - expect)) < 1e-10

    def test_zero_query_key_gives_uniform_weights(self):
        d = 4
        att = pn.SingleHeadAttention(d).double()
        with torch.no_grad():
            att.w_q.weight.zero_()
            att.w_k.weight.zero_()
        h = torch.randn(3, d, dtype=torch.float64)
        out = att(h, h, None)
        v = att.w_v(h)
        assert torch.allclose(out, v.mean(dim=0).expand(3, d), atol=1e-12)

    def test_self_only_mask_returns_value_projection(self):
        d = 5
        att = pn.SingleHeadAttention(d).double()
        h = torch.randn(4, d, dtype=torch.float64)
        mask = torch.ones(4, 4, dtype=torch.long)
        mask.fill_diagonal_(0)
        out = att(h, h, mask)
        assert torch.allclose(out, att.w_v(h), atol=1e-12)

    def test_fully_masked_row_raises(self):
        att = pn.SingleHeadAttention(3)
        h = torch.randn(2, 3)
        mask = torch.tensor([[0, 1], [1, 1]])
        with pytest.raises(ValueError):
            att(h, h, mask)

    def test_masked_weights_exactly_zero_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        d = 6
        att = pn.SingleHeadAttention(d).double()
        h_q = torch.tensor(rng.normal(size=(5, d)))
        h_kv = torch.tensor(rng.normal(size=(7, d)))
        mask = torch.tensor(rand_mask(rng, 5, 7))
        q = att.w_q(h_q)
        k = att.w_k(h_kv)
        scores = q @ k.T / np.sqrt(d)
        scores = scores.masked_fill(mask.bool(), float("-inf"))
        w = torch.softmax(scores, dim=-1)
        assert torch.all(w[mask.bool()] == 0)
        assert torch.allclose(w.sum(-1), torch.ones(5, dtype=torch.float64), atol=1e-6)


class TestProjectRaw:
    def test_zero_weights_zero_features(self):
        enc = pn.GraphEncoder(pn.NetConfig(d=8, encoder_layers=1))
        with torch.no_grad():
            enc.input_proj.weight.zero_()
            enc.input_proj.bias.zero_()
        raw = torch.randn(1, 6, 5)
        assert torch.all(enc.project_raw(raw) == 0)

    def test_identical_rows_identical_embeddings(self):
        enc = pn.GraphEncoder(pn.NetConfig(d=8, encoder_layers=1))
        row = torch.randn(5)
        raw = row.expand(1, 4, 5)
        out = enc.project_raw(raw)
        assert torch.allclose(out[0, 0], out[0, 3])

    def test_corner_normalization_exact(self, toy_dungeon):
        from bandex import belief, graph

        b = belief.BeliefMap(cells=toy_dungeon.cells.copy(),
                             resolution=toy_dungeon.resolution)
        coords = graph._lattice_vertices(b.cells, b.resolution, 3.0)
        g = graph.build_graph(b, tuple(coords[0]), [], [], 3.0, 9.0, 24, 6.0)
        w, h = g.extent_m
        g2 = graph.InformativeGraph(
            coords=np.array([[0.0, 0.0], [w, h]]), utility=np.array([0, 30]),
            guidepost=np.array([0, 1], dtype=np.uint8),
            occupancy=np.array([0, 0], dtype=np.int8),
            neighbors=(np.array([1]), np.array([0])),
            edge_mask=np.zeros((2, 2), dtype=np.uint8), current_index=0,
            is_temp=np.zeros(2, dtype=bool), extent_m=(w, h), spacing_m=3.0,
        )
        feats = g2.feature_matrix(utility_norm=30.0)
        assert feats[0, 0] == 0.0 and feats[0, 1] == 0.0
        assert feats[1, 0] == 1.0 and feats[1, 1] == 1.0
        assert feats[1, 2] == 1.0  # utility normalized by the cap


class TestEncoder:
    def test_single_layer_composition(self):
        rng = np.random.default_rng(2)
        cfg = pn.NetConfig(d=6, encoder_layers=1, ff_dim=12)
        enc = pn.GraphEncoder(cfg).double()
        n = 5
        raw = torch.tensor(rng.normal(size=(1, n, 5)))
        mask_np = rand_mask(rng, n, n, self_square=True)
        with torch.no_grad():
            out = enc(raw, torch.tensor(mask_np).unsqueeze(0)).squeeze(0).numpy()
            h0 = enc.project_raw(raw).squeeze(0).numpy()
        expect = scalar_encoder_layer(h0, mask_np, params_of(enc.layers[0]))
        assert np.max(np.abs(out - expect)) < 1e-9

    def test_three_layers_match_sequential_oracle(self):
        rng = np.random.default_rng(3)
        cfg = pn.NetConfig(d=5, encoder_layers=3, ff_dim=10)
        enc = pn.GraphEncoder(cfg).double()
        n = 6
        raw = torch.tensor(rng.normal(size=(1, n, 5)))
        mask_np = rand_mask(rng, n, n, self_square=True)
        with torch.no_grad():
            out = enc(raw, torch.tensor(mask_np).unsqueeze(0)).squeeze(0).numpy()
            h = enc.project_raw(raw).squeeze(0).numpy()
        for layer in enc.layers:
            h = scalar_encoder_layer(h, mask_np, params_of(layer))
        assert np.max(np.abs(out - h)) < 1e-9

    def test_masked_vertex_cannot_influence_single_layer(self):
        # two mutually masked vertices with self-edges only: each output is
        # independent of the other's input
        cfg = pn.NetConfig(d=4, encoder_layers=1)
        enc = pn.GraphEncoder(cfg).double()
        mask = torch.ones(1, 2, 2, dtype=torch.long)
        mask[0, 0, 0] = 0
        mask[0, 1, 1] = 0
        raw = torch.randn(1, 2, 5, dtype=torch.float64)
        out1 = enc(raw, mask)
        raw2 = raw.clone()
        raw2[0, 1] = torch.randn(5, dtype=torch.float64)
        out2 = enc(raw2, mask)
        assert torch.allclose(out1[0, 0], out2[0, 0], atol=1e-12)
        assert not torch.allclose(out1[0, 1], out2[0, 1])


class TestCurrentStateDecoder:
    def test_single_vertex_graph(self):
        d = 6
        dec = pn.CurrentStateDecoder(d).double()
        enc = torch.randn(1, 1, d, dtype=torch.float64)
        mu = dec(enc, torch.tensor([0]))
        v = dec.attention.w_v(enc[0, 0])
        expect = dec.merge(torch.cat([v, enc[0, 0]]))
        assert torch.allclose(mu.squeeze(0), expect, atol=1e-12)
        assert mu.shape == (1, d)

    def test_permuting_non_current_vertices_preserves_message(self):
        rng = np.random.default_rng(4)
        d = 8
        dec = pn.CurrentStateDecoder(d).double()
        n = 7
        feats = torch.tensor(rng.normal(size=(1, n, d)))
        mu = dec(feats, torch.tensor([0]))
        perm = [0] + list(1 + rng.permutation(n - 1))
        mu2 = dec(feats[:, perm, :], torch.tensor([0]))
        assert torch.allclose(mu, mu2, atol=1e-10)

    def test_message_length_is_d_for_any_n(self):
        d = 16
        dec = pn.CurrentStateDecoder(d)
        for n in (1, 3, 40, 500):
            feats = torch.randn(1, n, d)
            assert dec(feats, torch.tensor([n - 1])).shape == (1, d)


class TestCooperationDecoder:
    def test_single_message_value_projection(self):
        d = 6
        coop = pn.CooperationDecoder(d).double()
        own = torch.randn(1, d, dtype=torch.float64)
        other = torch.randn(1, 1, d, dtype=torch.float64)
        out = coop(own, other)
        assert torch.allclose(out, coop.attention.w_v(other[:, 0]), atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        d = 8
        coop = pn.CooperationDecoder(d).double()
        own = torch.tensor(rng.normal(size=(1, d)))
        others = torch.tensor(rng.normal(size=(1, 6, d)))
        out = coop(own, others)
        perm = rng.permutation(6)
        out2 = coop(own, others[:, perm, :])
        assert torch.allclose(out, out2, atol=1e-6)

    def test_arbitrary_team_sizes_without_reconfiguration(self):
        d = 16
        coop = pn.CooperationDecoder(d)
        own = torch.randn(1, d)
        for m in (3, 7):
            out = coop(own, torch.randn(1, m, d))
            assert out.shape == (1, d)

    def test_empty_others_falls_back_to_value_path(self):
        d = 8
        coop = pn.CooperationDecoder(d)
        own = torch.randn(1, d)
        out = coop(own, torch.zeros(1, 0, d))
        assert torch.allclose(out, coop.attention.w_v(own))


class TestPointerHead:
    def test_identical_neighbors_uniform(self):
        d = 8
        head = pn.PointerHead(d, logit_clip=10.0)
        f_co = torch.randn(1, d)
        nbr = torch.randn(1, 1, d).expand(1, 5, d)
        logp = head(f_co, nbr)
        assert torch.allclose(torch.exp(logp), torch.full((1, 5), 0.2), atol=1e-6)

    def test_probabilities_normalized(self):
        head = pn.PointerHead(8, logit_clip=10.0)
        logp = head(torch.randn(3, 8), torch.randn(3, 6, 8))
        assert torch.allclose(torch.exp(logp).sum(-1), torch.ones(3), atol=1e-6)

    def test_empty_neighbors_raises(self):
        head = pn.PointerHead(4, logit_clip=10.0)
        with pytest.raises(ValueError):
            head(torch.randn(1, 4), torch.randn(1, 0, 4))


class TestPointerPolicySampling:
    def _setup(self):
        from bandex import belief, graph

        cells = np.full((12, 12), np.uint8(2), dtype=np.uint8)
        cells[1:-1, 1:-1] = 1
        b = belief.BeliefMap(cells=cells, resolution=1.0)
        g = graph.build_graph(b, (3.5, 3.5), [], [], 3.0, 5.0, 24, 4.0)
        policy = pn.PolicyNetwork(pn.NetConfig(d=8, encoder_layers=1))
        encoded, mu = pn.policy_message(policy, g)
        return policy, encoded, g, mu

    def test_greedy_is_argmax(self):
        policy, encoded, g, mu = self._setup()
        out = pn.pointer_policy(policy, encoded, g, mu, [], train_mode=False)
        assert out.action == int(torch.argmax(out.log_probs))

    def test_sampling_statistics_match_probabilities(self):
        policy, encoded, g, mu = self._setup()
        out = pn.pointer_policy(policy, encoded, g, mu, [], train_mode=False)
        probs = torch.exp(out.log_probs).numpy().astype(np.float64)
        probs /= probs.sum()
        rng = np.random.default_rng(17)
        n = 100_000
        draws = rng.choice(len(probs), size=n, p=probs)  # same sampler the policy uses
        counts = np.bincount(draws, minlength=len(probs))
        for k, p in enumerate(probs):
            sigma = np.sqrt(n * p * (1 - p))
            assert abs(counts[k] - n * p) <= 3 * sigma + 1e-9

    def test_sampled_actions_follow_distribution(self):
        policy, encoded, g, mu = self._setup()
        rng = np.random.default_rng(23)
        first = pn.pointer_policy(policy, encoded, g, mu, [], train_mode=True, rng=rng)
        probs = torch.exp(first.log_probs).numpy().astype(np.float64)
        probs /= probs.sum()
        n = 20_000
        counts = np.zeros(len(probs))
        counts[first.action] += 1
        for _ in range(n - 1):
            out = pn.pointer_policy(policy, encoded, g, mu, [], train_mode=True, rng=rng)
            counts[out.action] += 1
        for k, p in enumerate(probs):
            sigma = np.sqrt(n * p * (1 - p))
            assert abs(counts[k] - n * p) <= 4 * sigma + 1e-9


class TestCritic:
    def _gt_graph(self, toy_dungeon):
        from bandex import belief, graph

        b = belief.BeliefMap.unknown_like(toy_dungeon)
        coords = graph._lattice_vertices(toy_dungeon.cells, toy_dungeon.resolution, 4.0)
        return graph.build_ground_truth_graph(
            toy_dungeon, b, [tuple(coords[2])], 0, [], 4.0, 12.0, 24, 6.0)

    def test_double_critics_disagree(self, toy_dungeon):
        g = self._gt_graph(toy_dungeon)
        torch.manual_seed(1)
        c1 = pn.CriticNetwork(pn.NetConfig(d=8, encoder_layers=1))
        c2 = pn.CriticNetwork(pn.NetConfig(d=8, encoder_layers=1))
        q1 = pn.critic_value(c1, g)
        q2 = pn.critic_value(c2, g)
        assert q1.shape == q2.shape
        assert not torch.allclose(q1, q2)

    def test_q_length_matches_neighbor_count(self, toy_dungeon):
        g = self._gt_graph(toy_dungeon)
        critic = pn.CriticNetwork(pn.NetConfig(d=8, encoder_layers=1))
        q = pn.critic_value(critic, g)
        assert q.shape == (len(g.action_targets()),)


class TestGeneralization:
    def test_one_parameter_set_covers_team_and_graph_sizes(self):
        cfg = pn.NetConfig(d=16, encoder_layers=2)
        policy = pn.PolicyNetwork(cfg)
        for n_vertices in (1, 17, 500):
            feats = torch.randn(1, n_vertices, 5)
            mask = torch.ones(1, n_vertices, n_vertices, dtype=torch.long)
            mask[0, torch.arange(n_vertices), torch.arange(n_vertices)] = 0
            encoded = policy.encode(feats, mask)
            mu = policy.message(encoded, torch.tensor([0]))
            for n_robots in range(2, 9):
                others = torch.randn(1, n_robots - 1, cfg.d)
                nbr = encoded[:, : max(1, min(4, n_vertices)), :]
                logp = policy.action_log_probs(mu, others, nbr)
                assert torch.isfinite(logp).all()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        policy = pn.PolicyNetwork(pn.NetConfig(d=16, encoder_layers=2))
        path = tmp_path / "ckpt.npz"
        pn.save_checkpoint(path, policy, {"episode": 7})
        loaded, manifest = pn.load_checkpoint(path)
        assert manifest["episode"] == 7
        assert manifest["net"]["d"] == 16
        assert manifest["format_version"] == pn.CHECKPOINT_FORMAT_VERSION
        for (k1, v1), (k2, v2) in zip(policy.state_dict().items(),
                                      loaded.state_dict().items()):
            assert k1 == k2
            assert v1.numpy().tobytes() == v2.numpy().tobytes()
