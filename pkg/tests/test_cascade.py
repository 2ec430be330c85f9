import json

import numpy as np
import pytest

import mdcc.cascade as cascade_mod
from mdcc import nn
from mdcc.cascade import Cascade, ReferenceSet, load_cascade, save_cascade
from mdcc.config import RunConfig
from mdcc.data import Instance, synth_generate
from mdcc.errors import ModelFormatError, ShapeError, TrainingError
from mdcc.evt import WeibullModel
from mdcc.leaf import LeafModel
from mdcc.openmax import UNKNOWN, RootModel, train_root

SMALL = RunConfig(
    buffer_size=30, reference_size=60, theta=0.1, beta=0.01,
    root_iterations=1000, leaf_iterations=150, root_hidden=(32,), leaf_hidden=(16,), eta_tail=10,
)


def hand_root():
    """Identity-activation root for classes 1 and 2 that rejects anything far from its MAVs."""
    net = nn.Network([nn.LayerSpec(2, 2, "identity")])
    net.params[0][...] = np.eye(2)
    net.params[1][...] = 0.0
    return RootModel(net, [1, 2], alpha=2, gamma=0.5, mavs=5.0 * np.eye(2),
                     weibulls=[WeibullModel(2.0, 1.0, 10)] * 2)


def hand_leaf(label, center):
    net = nn.Network([nn.LayerSpec(2, 2, "identity")])
    return LeafModel(net, label, np.asarray(center, dtype=float), 1.0, theta=0.1, beta=0.0,
                     distance_kind="euclidean")


@pytest.fixture(scope="module")
def world():
    return synth_generate(4, 8, 10.0, 60, 40, seed=3)


def fresh_cascade(world, config=SMALL):
    root_train = [i for i in world.train if i.label in (1, 2)]
    root = train_root(world.matrix(root_train), [i.label for i in root_train], config)
    return Cascade.initialize(root, root_train, config)


@pytest.fixture(scope="module")
def stage2(world):
    cascade = fresh_cascade(world)
    transitions = []
    for label in (3, 4):
        for inst in world.train:
            if inst.label == label:
                _, t = cascade.ingest(inst)
                if t is not None:
                    transitions.append(t)
    return cascade, transitions


class TestRecognize:
    def test_root_accepts(self):
        c = Cascade(hand_root(), SMALL, ReferenceSet(10), leaves=[hand_leaf(3, [5.0, 0.0])])
        # the leaf would also accept, but the root answers first
        assert c.recognize(np.array([5.0, 0.0])) == 1

    def test_stage_zero_rejects_to_unknown(self):
        c = Cascade(hand_root(), SMALL, ReferenceSet(10))
        assert c.recognize(np.array([40.0, 40.0])) == UNKNOWN

    def test_second_leaf_path(self):
        c = Cascade(hand_root(), SMALL, ReferenceSet(10),
                    leaves=[hand_leaf(3, [30.0, 0.0]), hand_leaf(4, [0.0, 30.0])])
        # far from both MAVs, so the root hands every probe down
        assert c.recognize(np.array([0.0, 30.2])) == 4
        assert c.recognize(np.array([30.3, 0.0])) == 3
        assert c.recognize(np.array([30.0, 30.0])) == UNKNOWN

    def test_leaf_order_breaks_ties(self):
        c = Cascade(hand_root(), SMALL, ReferenceSet(10),
                    leaves=[hand_leaf(3, [30.0, 0.0]), hand_leaf(4, [30.0, 0.5])])
        assert c.recognize(np.array([30.0, 0.25])) == 3

    def test_batch_matches_single(self, stage2, world):
        cascade, _ = stage2
        X = world.matrix(world.test)
        batch = cascade.recognize_batch(X)
        assert [cascade.recognize(x) for x in X[:25]] == batch[:25].tolist()

    def test_wrong_dimension(self, stage2):
        with pytest.raises(ShapeError):
            stage2[0].recognize(np.zeros(5))

    def test_pure(self, stage2, world):
        cascade, _ = stage2
        before = cascade.dumps()
        cascade.recognize_batch(world.matrix(world.test))
        assert cascade.dumps() == before


class TestIngest:
    def test_known_instance_leaves_buffers_alone(self, world):
        cascade = fresh_cascade(world)
        inst = next(i for i in world.train if i.label == 1)
        pred, transition = cascade.ingest(inst)
        assert pred == 1 and transition is None
        assert cascade.buffers == {}

    def test_transition_at_capacity(self, world):
        cascade = fresh_cascade(world)
        new = [i for i in world.train if i.label == 3]
        for inst in new[: SMALL.buffer_size - 1]:
            assert cascade.ingest(inst) == (UNKNOWN, None)
        assert len(cascade.buffers["3"].ids) == SMALL.buffer_size - 1
        pred, transition = cascade.ingest(new[SMALL.buffer_size - 1])
        assert pred == UNKNOWN
        assert transition.stage == 1 and cascade.stage == 1
        assert len(cascade.leaves) == 1
        assert transition.class_label == 3  # max(1, 2) + 1
        assert transition.buffer_labels == [3] * SMALL.buffer_size
        assert "3" not in cascade.buffers

    def test_interleaved_groups(self, world):
        cascade = fresh_cascade(world)
        threes = [i for i in world.train if i.label == 3]
        fours = [i for i in world.train if i.label == 4]
        for a, b in zip(threes[: SMALL.buffer_size - 1], fours[: SMALL.buffer_size - 1]):
            assert cascade.ingest(a)[1] is None
            assert cascade.ingest(b)[1] is None
        assert {g: len(b.ids) for g, b in cascade.buffers.items()} == {"3": 29, "4": 29}
        assert cascade.ingest(fours[SMALL.buffer_size - 1])[1].group_id == "4"
        assert cascade.stage == 1
        assert len(cascade.buffers["3"].ids) == 29

    def test_missing_group(self, world):
        cascade = fresh_cascade(world)
        inst = Instance("stray", np.full(8, 500.0), None, None, "test")
        with pytest.raises(ValueError, match="group_id"):
            cascade.ingest(inst)

    def test_training_failure_is_atomic(self, world, monkeypatch):
        cascade = fresh_cascade(world)
        new = [i for i in world.train if i.label == 3][: SMALL.buffer_size]
        for inst in new[:-1]:
            cascade.ingest(inst)
        reference = cascade.reference_set.to_dict()

        def boom(*args, **kwargs):
            raise TrainingError("diverged")

        monkeypatch.setattr(cascade_mod, "train_leaf", boom)
        with pytest.raises(TrainingError):
            cascade.ingest(new[-1])
        assert cascade.stage == 0 and cascade.leaves == []
        assert cascade.reference_set.to_dict() == reference
        assert cascade.buffers["3"].ids == [i.id for i in new]

    def test_leaf_ids_follow_the_largest_known(self, stage2):
        cascade, transitions = stage2
        assert [t.class_label for t in transitions] == [3, 4]
        assert cascade.known_classes == [1, 2, 3, 4]

    def test_learned_classes_are_recognised(self, stage2, world):
        cascade, _ = stage2
        test = world.test
        pred = cascade.recognize_batch(world.matrix(test))
        truth = np.array([i.label for i in test])
        assert np.mean(pred == truth) >= 0.8


class TestReferenceSet:
    def test_two_to_four_classes(self):
        ref = ReferenceSet.initial(100, 0, {1: list(range(80)), 2: list(range(100, 180))})
        assert [len(v) for v in ref.per_class.values()] == [50, 50]
        ref = ref.rebalance(3, list(range(200, 260)))
        ref = ref.rebalance(4, list(range(300, 360)))
        assert [len(v) for v in ref.per_class.values()] == [25, 25, 25, 25]
        assert ref.total <= 100

    def test_floor_quota(self):
        ref = ReferenceSet.initial(10, 0, {c: list(range(c * 10, c * 10 + 10)) for c in (1, 2, 3)})
        assert ref.quota() == 3
        assert ref.total == 9

    def test_short_class_keeps_everything(self):
        ref = ReferenceSet.initial(20, 0, {1: list(range(10)), 2: list(range(10, 20)), 3: list(range(20, 30))})
        ref = ref.rebalance(4, ["a", "b"])
        assert ref.quota() == 5
        assert ref.per_class[4] == ["a", "b"]

    def test_rebalance_returns_new_set(self):
        ref = ReferenceSet.initial(10, 0, {1: list(range(10)), 2: list(range(10, 20))})
        before = ref.to_dict()
        ref.rebalance(3, list(range(20, 30)))
        assert ref.to_dict() == before

    def test_downsample_keeps_a_subset_in_order(self):
        ids = list(range(100))
        ref = ReferenceSet.initial(30, 7, {1: ids, 2: ids})
        for kept in ref.per_class.values():
            assert kept == sorted(kept) and set(kept) <= set(ids)

    def test_duplicate_class(self):
        ref = ReferenceSet.initial(10, 0, {1: [1], 2: [2]})
        with pytest.raises(ValueError):
            ref.rebalance(2, [3])

    def test_stage2_quota(self, stage2):
        cascade, _ = stage2
        ref = cascade.reference_set
        assert ref.total <= SMALL.reference_size
        assert all(len(v) == SMALL.reference_size // 4 for v in ref.per_class.values())


class TestSerialization:
    def test_byte_identical_resave(self, stage2, tmp_path):
        cascade, _ = stage2
        save_cascade(cascade, tmp_path / "a.json")
        save_cascade(load_cascade(tmp_path / "a.json"), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_predictions_survive(self, stage2, world, tmp_path):
        cascade, _ = stage2
        save_cascade(cascade, tmp_path / "m.json")
        again = load_cascade(tmp_path / "m.json")
        rng = np.random.default_rng(0)
        centre = world.matrix(world.train).mean(axis=0)
        probes = centre + rng.normal(scale=8.0, size=(1000, 8))
        np.testing.assert_array_equal(again.recognize_batch(probes), cascade.recognize_batch(probes))

    def test_truncated(self, stage2, tmp_path):
        text = stage2[0].dumps()
        path = tmp_path / "cut.json"
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ModelFormatError):
            load_cascade(path)

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(ModelFormatError):
            load_cascade(path)

    def test_missing_field(self, stage2):
        d = json.loads(stage2[0].dumps())
        del d["leaves"]
        with pytest.raises(ModelFormatError):
            Cascade.from_dict(d)

    def test_instances_restore_the_pool(self, stage2, world):
        cascade, _ = stage2
        again = Cascade.from_dict(json.loads(cascade.dumps()), world)
        X, y = again.reference_arrays()
        X0, y0 = cascade.reference_arrays()
        np.testing.assert_array_equal(X, X0)
        np.testing.assert_array_equal(y, y0)

    def test_unknown_instance_reference(self, stage2, world):
        d = json.loads(stage2[0].dumps())
        with pytest.raises(ModelFormatError, match="not in the dataset"):
            Cascade.from_dict(d, world.test)

    def test_node_bytes(self, stage2):
        cascade, _ = stage2
        nodes = cascade.node_bytes()
        assert len(nodes) == 3
        assert nodes == Cascade.from_dict(json.loads(cascade.dumps())).node_bytes()

