from __future__ import annotations

import json

import pytest

from autolib import Catalog, load_layout
from autolib.errors import ScenarioInvalid, SimTimeBudgetExceeded
from autolib.events import Event, EventQueue, dump_trace, load_trace
from autolib.rng import SplitMix64, make_rng
from autolib.sim import (
    Metrics,
    Request,
    Scenario,
    compute_metrics,
    load_scenario,
    nearest_rank_percentile,
    run,
)

from conftest import make_barcode, make_record


def return_request(n: int, at_ms: int, width_mm: int = 30) -> Request:
    return Request(at_ms=at_ms, op="return", record=make_record(n, width_mm).to_json())


class TestEventQueue:
    def test_orders_by_time_then_seq(self):
        q = EventQueue()
        q.schedule(50, "TaskSubmitted", {"task_id": 2})
        q.schedule(10, "TaskSubmitted", {"task_id": 1})
        q.schedule(10, "TaskCompleted", {"task_id": 0})
        popped = [q.pop() for _ in range(3)]
        assert [(e.time_ms, e.kind) for e in popped] == [
            (10, "TaskSubmitted"),
            (10, "TaskCompleted"),
            (50, "TaskSubmitted"),
        ]
        assert popped[0].seq < popped[1].seq

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            EventQueue().schedule(0, "Nonsense")

    def test_trace_roundtrip(self):
        events = [
            Event(10, 0, "TaskSubmitted", {"task_id": 1, "op": "return"}),
            Event(20, 1, "TaskCompleted", {"task_id": 1}),
        ]
        assert load_trace(dump_trace(events)) == events


class TestRng:
    def test_known_sequence_is_stable(self):
        rng = SplitMix64(42)
        first = [rng.next_u64() for _ in range(3)]
        rng2 = SplitMix64(42)
        assert [rng2.next_u64() for _ in range(3)] == first

    def test_uniform_in_unit_interval(self):
        rng = SplitMix64(7)
        for _ in range(1000):
            x = rng.uniform()
            assert 0.0 <= x < 1.0

    def test_named_lookup(self):
        assert make_rng("splitmix64", 1).next_u64() == SplitMix64(1).next_u64()
        with pytest.raises(ValueError):
            make_rng("mt19937", 1)


class TestScenario:
    def test_request_times_must_be_nondecreasing(self, reference_layout):
        with pytest.raises(ScenarioInvalid):
            Scenario(
                layout=reference_layout,
                catalog=Catalog(),
                requests=[return_request(1, 100), return_request(2, 50)],
            )

    def test_load_scenario_file(self, tmp_path, reference_layout_path):
        catalog = Catalog()
        catalog.upsert(make_record(1))
        catalog.save(tmp_path / "catalog.jsonl")
        doc = {
            "layout": str(reference_layout_path),
            "catalog": "catalog.jsonl",
            "seed": 7,
            "requests": [
                {"at_ms": 0, "op": "return", "record": make_record(2).to_json()},
            ],
            "budget_ms": 500000,
        }
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(doc))
        scenario = load_scenario(path)
        assert scenario.seed == 7
        assert scenario.budget_ms == 500000
        assert len(scenario.catalog) == 1
        assert load_scenario(path, seed_override=99).seed == 99


class TestRun:
    def test_empty_requests(self, reference_layout):
        result = run(Scenario(layout=reference_layout, catalog=Catalog(), requests=[]))
        assert result.trace == []
        assert result.metrics.tasks_completed == 0
        assert result.metrics.utilization == {1: 0.0, 2: 0.0}

    def test_single_return_trace_order(self, reference_layout):
        result = run(
            Scenario(layout=reference_layout, catalog=Catalog(), requests=[return_request(1, 0)])
        )
        kinds = [e.kind for e in result.trace]
        for a, b in [
            ("TaskSubmitted", "ArmAssigned"),
            ("ArmAssigned", "GripOk"),
            ("GripOk", "SegmentReserved"),
            ("SegmentReserved", "BookPlaced"),
            ("BookPlaced", "TaskCompleted"),
        ]:
            assert kinds.index(a) < kinds.index(b)
        barcode = make_barcode(1)
        assert result.catalog.get(barcode).state.kind == "Shelved"

    def test_same_seed_identical_bytes(self, reference_layout):
        scenario = lambda: Scenario(
            layout=load_layout("layouts/reference.json"),
            catalog=Catalog(),
            requests=[return_request(i, i * 3000) for i in range(4)],
            seed=11,
        )
        a = run(scenario())
        b = run(scenario())
        assert a.trace_jsonl() == b.trace_jsonl()
        assert a.metrics.to_csv() == b.metrics.to_csv()

    def test_time_never_decreases(self, reference_layout):
        result = run(
            Scenario(
                layout=reference_layout,
                catalog=Catalog(),
                requests=[return_request(i, i * 2000) for i in range(5)],
            )
        )
        times = [e.time_ms for e in result.trace]
        assert times == sorted(times)
        seqs = [e.seq for e in result.trace]
        assert len(set(seqs)) == len(seqs)

    def test_budget_exceeded_raises(self, reference_layout):
        with pytest.raises(SimTimeBudgetExceeded):
            run(
                Scenario(
                    layout=reference_layout,
                    catalog=Catalog(),
                    requests=[return_request(1, 0)],
                    budget_ms=100,
                )
            )


class TestMetrics:
    def test_single_task_latency(self, reference_layout):
        result = run(
            Scenario(layout=reference_layout, catalog=Catalog(), requests=[return_request(1, 0)])
        )
        assert result.metrics.mean_latency_ms == 9856.0
        assert result.metrics.p95_latency_ms == 9856

    def test_idle_arm_zero_utilization(self, reference_layout):
        result = run(
            Scenario(layout=reference_layout, catalog=Catalog(), requests=[return_request(1, 0)])
        )
        assert result.metrics.utilization[2] == 0.0
        assert 0.0 <= result.metrics.utilization[1] <= 1.0

    def test_metrics_pure_function_of_trace(self, reference_layout):
        result = run(
            Scenario(
                layout=reference_layout,
                catalog=Catalog(),
                requests=[return_request(i, i * 4000) for i in range(3)],
            )
        )
        again = compute_metrics(result.trace, arm_ids=[1, 2])
        assert again == result.metrics

    def test_no_tasks_zeroes(self):
        metrics = compute_metrics([], arm_ids=[1])
        assert metrics.mean_latency_ms == 0.0
        assert metrics.p95_latency_ms == 0
        assert metrics.utilization == {1: 0.0}

    def test_nearest_rank(self):
        assert nearest_rank_percentile([], 0.95) == 0
        assert nearest_rank_percentile([5], 0.95) == 5
        values = list(range(1, 101))
        assert nearest_rank_percentile(values, 0.95) == 95
        assert nearest_rank_percentile(list(range(1, 21)), 0.95) == 19

    def test_csv_shape(self, reference_layout):
        result = run(
            Scenario(layout=reference_layout, catalog=Catalog(), requests=[return_request(1, 0)])
        )
        lines = result.metrics.to_csv().strip().split("\n")
        assert lines[0] == (
            "tasks_completed,tasks_failed,mean_latency_ms,p95_latency_ms,"
            "utilization_arm_1,utilization_arm_2,distance_m,deadlocks_resolved"
        )
        assert len(lines[0].split(",")) == len(lines[1].split(","))

    def test_counts_add_up(self, reference_layout):
        requests = [return_request(i, i * 1000) for i in range(4)]
        # Duplicate return of an in-flight barcode fails fast.
        requests.append(return_request(0, 4000))
        result = run(
            Scenario(layout=reference_layout, catalog=Catalog(), requests=requests)
        )
        m = result.metrics
        assert m.tasks_completed + m.tasks_failed == m.tasks_submitted == 5
        assert m.tasks_failed == 1
