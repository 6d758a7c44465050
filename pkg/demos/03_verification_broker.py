#!/usr/bin/env python3
"""Drive the verification broker: async submission, timeouts, recycling.

A burst of jobs with mixed outcomes flows through a worker pool on a
virtual clock, so the 60-second-style timeout behavior plays out in
milliseconds of real time. Every submitted job yields exactly one result.
"""

from proofloop import Broker, MockBackend, VirtualClock

import time


def main() -> None:
    clock = VirtualClock()
    broker = Broker(
        lambda: MockBackend(clock=clock),
        worker_count=8,
        recycle_threshold=10,
        clock=clock,
    )
    jobs = (
        [f"exact rfl -- {i}" for i in range(12)]
        + [f"MOCK_FAIL -- {i}" for i in range(6)]
        + [f"needs sorry -- {i}" for i in range(4)]
        + [f"MOCK_SLEEP:2.5 search -- {i}" for i in range(5)]   # beyond the timeout
        + [f"MOCK_SLEEP:0.5 quick -- {i}" for i in range(5)]
        + ["MOCK_CRASH boom"]
    )

    with broker:
        ids = [broker.submit_code(code, timeout=1.0) for code in jobs]
        print(f"submitted {len(ids)} jobs (timeout 1.0s each); advancing virtual time...")
        while broker.stats().completed < len(ids):
            clock.advance(0.25)
            time.sleep(0.002)

        counts: dict[str, int] = {}
        slowest = 0.0
        for job_id in ids:
            result = broker.try_result(job_id)
            counts[result.verdict.status.value] = counts.get(result.verdict.status.value, 0) + 1
            slowest = max(slowest, result.exec_time)

        stats = broker.stats()
        print(f"\nresults by status: {counts}")
        print(f"completed {stats.completed}/{stats.submitted}, "
              f"timeout rate {stats.timeout_rate:.2f}, recycles {stats.recycles}")
        print(f"slowest job ran {slowest:.2f} virtual seconds "
              f"(bounded by timeout 1.0 + grace {broker.grace})")
        assert stats.completed == len(jobs)


if __name__ == "__main__":
    main()
