"""Full protocol runs on a discrete-event clock.

Protocol timing uses the simulated clock; wall-clock spent inside each
entity is measured separately and kept out of the deterministic metrics.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import tracemalloc
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from fractions import Fraction
from pathlib import Path

from .. import crypto, netmodel
from ..aggregator import UP_RECIPIENT, Aggregator, confirm_delivery
from ..counters import OperationCounters, assert_counters, predict_counters, total
from ..errors import InvariantViolation, KeyDistributionError, MeteringError, RouteError
from ..meter import MeterAgent, Phase
from ..netmodel import Stack
from ..overlay import SINK, OverlayTopology, packet_digest, random_path
from ..programs import Decision, generate_program_list
from ..utility import SHARED, UtilityProvider, Verdict, redemption_request
from .adversary import Adversary, scan_transcript
from .dataset import load_dataset, synthetic_readings
from .events import Scheduler
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

CUTOFF_LEAD = timedelta(hours=1)        # enrollment closes this long before activation
DESIGNATION_LEAD = timedelta(minutes=30)
BLOOM_LAG = timedelta(minutes=5)        # filter broadcast after each window end
ENROLL_OFFSET = timedelta(minutes=10)
WAN_HOPS = (("AGG", "eNB", Stack.LTE_PDCP), ("eNB", "PGW", Stack.ETHERNET_GTP),
            ("PGW", "UP", Stack.ETHERNET))


def _iso(t: datetime) -> str:
    return t.isoformat()


@dataclass
class Packet:
    id: int
    kind: str
    program_id: str | None
    source: str
    sent_at: datetime
    payload: int
    delivered: bool = False
    dropped: bool = False
    rejected: str | None = None
    parent: int | None = None          # packet whose payload the sink re-sent


@dataclass
class RunResult:
    config: ScenarioConfig
    metrics: dict
    timings: dict
    events: list
    dataset_csv: str
    ledger_ndjson: str
    trace: list
    simulation: "Simulation" = field(repr=False)

    def metrics_json(self) -> str:
        return json.dumps(self.metrics, indent=2, sort_keys=True) + "\n"

    def events_ndjson(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("time", "hop_from", "hop_to", "bytes", "kind", "packet"))
        w.writerows(self.trace)
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "metrics.json": self.metrics_json(),
            "timings.json": json.dumps(self.timings, indent=2, sort_keys=True) + "\n",
            "events.ndjson": self.events_ndjson(),
            "dataset.csv": self.dataset_csv,
            "ledger.ndjson": self.ledger_ndjson,
            "trace.csv": self.trace_csv(),
        }
        paths = {}
        for name, text in files.items():
            p = out / name
            p.write_text(text)
            paths[name] = p
        return paths


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.wall = defaultdict(float)
        self.wall_meter = defaultdict(float)
        self.events: list[dict] = []
        self.trace: list[tuple] = []
        self.packets: dict[int, Packet] = {}
        self._next_packet = 0
        self.bytes = defaultdict(lambda: {"packets": 0, "payload": 0, "framed": 0,
                                          "seconds": Fraction(0)})
        self.kind_counts = Counter()
        self.redemptions: dict[str, str] = {}
        self.releases = {}
        self.grant_recipients = defaultdict(list)
        self.enroll_seq: dict[int, str] = {}
        self.participants: dict[str, list[str]] = {}
        self.designated: dict[str, str] = {}
        self.bloom_stats = {"broadcasts": 0, "confirmed": 0, "false_negatives": 0,
                            "probes": 0, "false_positives": 0, "analytic_fpr": []}
        self._epoch_packets: list[Packet] = []
        self._epoch_wires: dict[int, bytes] = {}
        self.customer = OperationCounters()
        self._setup()

    # -- setup ---------------------------------------------------------------

    def _setup(self) -> None:
        cfg = self.cfg
        bits = cfg.rsa_bits
        self.meter_ids = cfg.meter_ids()
        self.address = {mid: f"n{i:03d}" for i, mid in enumerate(self.meter_ids)}
        self.by_address = {a: m for m, a in self.address.items()}
        self.meter_keys = {mid: crypto.keygen(bits, cfg.rng(f"keygen/{mid}"), mid) for mid in self.meter_ids}
        self.up_keys = crypto.keygen(bits, cfg.rng("keygen/UP"), "UP")
        self.agg_keys = crypto.keygen(bits, cfg.rng("keygen/AGG"), "AGG")
        self.catalog = generate_program_list(list(cfg.programs), now=cfg.start)
        self.by_program = {p.id: p for p in self.catalog}
        self.up = UtilityProvider(self.up_keys, {m: k.public for m, k in self.meter_keys.items()},
                                  cfg.rng("up"), cfg.threshold)
        self.agg = Aggregator(self.agg_keys, cfg.rng("agg"), cfg.bloom_m, cfg.bloom_k,
                              optimized=cfg.optimized)
        self.assignment: dict[str, str] = {}
        i = 0
        for pid, count in cfg.participation:
            for mid in self.meter_ids[i:i + count]:
                self.assignment[mid] = pid
            i += count
        readings = self._readings()
        self.meters = {
            mid: MeterAgent(mid, self.meter_keys[mid], self.up_keys.public, self.agg_keys.public,
                            cfg.rng(f"meter/{mid}"), readings=readings.get(mid),
                            epsilon=cfg.epsilon, p_max=cfg.p_max, strict=cfg.strict,
                            clamp=cfg.clamp, optimized=cfg.optimized)
            for mid in self.meter_ids
        }
        nodes = [self.address[m] for m in self.meter_ids]
        if cfg.topology == "ring":
            self.topology = OverlayTopology.ring(nodes)
        elif cfg.topology == "clique":
            self.topology = OverlayTopology.clique(nodes)
        else:
            self.topology = OverlayTopology.load(cfg.topology, nodes)
        self.adversary = Adversary(cfg.adversary, cfg.rng("adversary"))
        self.path_rng = cfg.rng("overlay")
        self.drop_rng = cfg.rng("drops")
        self.probe_rng = cfg.rng("bloom-probes")
        self.customer_rng = cfg.rng("customer")
        self.links = {
            Stack.WISUN: netmodel.LinkSpec(Stack.WISUN, cfg.nan_bw, cfg.meters_sharing),
            **{s: netmodel.LinkSpec(s, cfg.wan_bw, cfg.meters_sharing) for s in netmodel.WAN_PATH},
        }
        self.sched = Scheduler(cfg.start)

    def _readings(self):
        cfg = self.cfg
        enrolled = [m for m in self.meter_ids if m in self.assignment]
        if cfg.dataset:
            streams = load_dataset(cfg.dataset, strict=cfg.strict)
            source = sorted(streams)
            if len(source) < len(enrolled):
                raise MeteringError(f"dataset has {len(source)} meters, {len(enrolled)} needed")
            return {mid: streams[src] for mid, src in zip(enrolled, source)}
        if not enrolled:
            return {}
        start = min(self.by_program[self.assignment[m]].pat for m in enrolled)
        days = max(self.by_program[self.assignment[m]].pd for m in enrolled)
        return synthetic_readings(enrolled, start, days, lambda m: self.cfg.rng(f"dataset/{m}"))

    # -- bookkeeping ---------------------------------------------------------

    def log_event(self, kind: str, entity: str = "", **detail) -> None:
        rec = {"t": _iso(self.sched.now), "kind": kind}
        if entity:
            rec["entity"] = entity
        rec.update(detail)
        self.events.append(rec)

    def timed(self, entity: str, fn, *args, meter: str | None = None):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        finally:
            dt = time.perf_counter() - t0
            self.wall[entity] += dt
            if meter is not None:
                self.wall_meter[meter] += dt

    def reject(self, packet: Packet, reason: str) -> None:
        packet.rejected = reason
        self.log_event("rejected", kind_of=packet.kind, packet=packet.id, reason=reason)
        # a rejection downstream of a fan-out also counts against the original
        up = packet.parent
        while up is not None and self.packets[up].rejected is None:
            self.packets[up].rejected = f"downstream: {reason}"
            up = self.packets[up].parent

    # -- transport -----------------------------------------------------------

    def send(self, kind: str, source: str, hops, wire: bytes, on_arrival, *, program_id=None,
             frames=None, on_relay=None, parent=None) -> Packet:
        """Carry ``wire`` over ``hops`` = [(from, to, stack, class)], then call
        ``on_arrival(packet, bytes)`` at the arrival time. ``on_relay(name, bytes)``
        fires as the packet passes named intermediate points (the sink)."""
        pid = self._next_packet
        self._next_packet += 1
        packet = Packet(pid, kind, program_id, source, self.sched.now, len(wire), parent=parent)
        self.packets[pid] = packet
        self.kind_counts[kind] += 1
        frames = frames or [len(wire)]
        t = self.sched.now
        elapsed = Fraction(0)
        for a, b, stack, cls in hops:
            bw = self.links[stack].per_meter_bw
            framed = sum(netmodel.frame_size(f, stack) for f in frames)
            secs = sum(netmodel.transmission_time(netmodel.frame_size(f, stack), bw) for f in frames)
            acct = self.bytes[f"{cls}:{stack.value}"]
            acct["packets"] += 1
            acct["payload"] += sum(frames)
            acct["framed"] += framed
            acct["seconds"] += secs
            elapsed += secs
            self.trace.append((_iso(t + _td(elapsed)), a, b, framed, kind, pid))
            wire = self.adversary.observe(pid, cls, kind, wire)
            if self.cfg.drop_prob and self.drop_rng.random() < self.cfg.drop_prob:
                packet.dropped = True
                self.log_event("dropped", kind_of=kind, packet=pid, hop_from=a, hop_to=b)
                return packet
            if on_relay is not None and b == SINK and (a, b) != tuple(hops[-1][:2]):
                on_relay(packet, wire, a)
        arrival = t + _td(elapsed)
        final = wire

        def arrive():
            packet.delivered = True
            on_arrival(packet, final)

        self.sched.at(arrival, f"arrive:{kind}", arrive)
        return packet

    def nan_hop(self, a: str, b: str):
        return (a, b, Stack.WISUN, "nan")

    def wan_up(self):
        return [(a, b, s, "wan") for a, b, s in WAN_HOPS]

    def wan_down(self):
        return [(b, a, s, "wan") for a, b, s in reversed(WAN_HOPS)]

    # -- phases ----------------------------------------------------------------

    def publish(self) -> None:
        blob, sig = self.timed("utility", self.up.publish_programs, self.catalog)
        wire = blob + sig.value.to_bytes(self.up.modulus_len, "big")
        frames = [len(blob), self.up.modulus_len]
        self.log_event("catalog_published", "UP", programs=len(self.catalog), bytes=len(blob))

        def at_agg(packet, data):
            for mid in self.meter_ids:
                hop = self.nan_hop(SINK, self.address[mid])
                self.send("catalog", "UP", [hop], data,
                          lambda p, d, mid=mid: self.deliver_catalog(mid, p, d), frames=frames,
                          parent=packet.id)

        if self.catalog:
            self.send("catalog", "UP", self.wan_down(), wire, at_agg, frames=frames)

    def deliver_catalog(self, mid: str, packet: Packet, data: bytes) -> None:
        meter = self.meters[mid]
        k = self.up.modulus_len
        blob, sig = data[:-k], crypto.Signature(int.from_bytes(data[-k:], "big"), "UP")
        try:
            self.timed("meter", meter.receive_catalog, blob, sig, meter=mid)
        except MeteringError as exc:
            self.reject(packet, f"catalog: {exc}")
            return
        pid = self.assignment.get(mid)
        if pid is None:
            return
        idx = self.meter_ids.index(mid)
        when = self.sched.now + ENROLL_OFFSET + timedelta(seconds=idx)
        self.sched.at(when, "enroll", lambda: self.enroll(mid, pid))

    def enroll(self, mid: str, pid: str) -> None:
        meter = self.meters[mid]
        program = next(p for p in meter.state.catalog or self.catalog if p.id == pid)
        wire = self.timed("meter", meter.enroll, program, meter=mid)
        self.log_event("enrollment_sent", mid, program_id=pid)
        hops = [self.nan_hop(self.address[mid], SINK)] + self.wan_up()
        self.send("enrollment", mid, hops, wire, lambda p, d: self.receive_enrollment(mid, p, d),
                  program_id=pid)

    def receive_enrollment(self, mid: str, packet: Packet, data: bytes) -> None:
        seq = self.timed("utility", self.up.handle_enrollment, data)
        if seq is None:
            self.reject(packet, f"enrollment: {self.up.rejections[-1][1]}")
            return
        self.enroll_seq[seq] = mid  # ground truth known to the simulator only

    def cutoff(self, pid: str) -> None:
        outcome = self.timed("utility", self.up.close_enrollment, pid)
        self.log_event("enrollment_closed", "UP", program_id=pid, decision=outcome.decision.value,
                       participants=outcome.participants)
        for _seq, mid, wire in outcome.grants:
            hops = self.wan_down() + [self.nan_hop(SINK, self.address[mid])]

            def relay(packet, data, _a, mid=mid):
                self.grant_recipients[pid].append(mid)

            self.send("grant", "UP", hops, wire, lambda p, d, mid=mid: self.deliver_grant(mid, p, d),
                      program_id=pid, on_relay=relay)
        for _seq, mid, sig in outcome.cancels:
            data = sig.value.to_bytes(self.up.modulus_len, "big")
            hops = self.wan_down() + [self.nan_hop(SINK, self.address[mid])]
            self.send("cancel", "UP", hops, data, lambda p, d, mid=mid: self.deliver_cancel(mid, p, d),
                      program_id=pid)
        if outcome.decision is Decision.EXECUTE:
            pr = self.by_program[pid]
            self.sched.at(pr.pat - DESIGNATION_LEAD, "designate", lambda: self.designate(pid))

    def deliver_grant(self, mid: str, packet: Packet, data: bytes) -> None:
        try:
            self.timed("meter", self.meters[mid].process_grant, data, meter=mid)
        except MeteringError as exc:
            self.reject(packet, f"grant: {exc}")
            return
        self.participants.setdefault(packet.program_id, []).append(mid)
        self.log_event("granted", mid, program_id=packet.program_id)

    def deliver_cancel(self, mid: str, packet: Packet, data: bytes) -> None:
        sig = crypto.Signature(int.from_bytes(data, "big"), "UP")
        try:
            self.timed("meter", self.meters[mid].process_cancel, sig, meter=mid)
        except MeteringError as exc:
            self.reject(packet, f"cancel: {exc}")
            return
        self.log_event("cancel_received", mid, program_id=packet.program_id)

    def designate(self, pid: str) -> None:
        pool = sorted(set(self.grant_recipients[pid]))
        if not pool:
            return
        gen = self.timed("aggregator", self.agg.designate, pool)
        self.designated[pid] = gen
        self.log_event("key_generator_designated", "AGG", program_id=pid)
        meter = self.meters[gen]
        if meter.phase is not Phase.REPORTING:
            self.log_event("key_generation_failed", gen, program_id=pid, reason=meter.phase.value)
            return
        wire = self.timed("meter", meter.generate_shared_key, meter=gen)
        self.send("shared_key", gen, [self.nan_hop(self.address[gen], SINK)], wire,
                  lambda p, d: self.distribute(pid, gen, pool, p, d), program_id=pid)

    def distribute(self, pid: str, gen: str, pool: list[str], packet: Packet, data: bytes) -> None:
        recipients = {m: self.meter_keys[m].public for m in pool}
        recipients[UP_RECIPIENT] = self.up_keys.public
        try:
            out = self.timed("aggregator", self.agg.distribute_shared_key, data, gen,
                             self.meter_keys[gen].public, pid, recipients)
        except KeyDistributionError as exc:
            self.reject(packet, f"shared key: {exc}")
            return
        gen_pk = self.meter_keys[gen].public
        for name, wire in out.items():
            if name == UP_RECIPIENT:
                self.send("key_distribution", "AGG", self.wan_up(), wire,
                          lambda p, d: self.deliver_key_up(p, d), program_id=pid)
            else:
                self.send("key_distribution", "AGG", [self.nan_hop(SINK, self.address[name])], wire,
                          lambda p, d, name=name: self.deliver_key_meter(name, gen_pk, p, d),
                          program_id=pid)

    def deliver_key_up(self, packet: Packet, data: bytes) -> None:
        keys = {m: k.public for m, k in self.meter_keys.items()}
        if not self.timed("utility", self.up.receive_shared_key, data, keys):
            self.reject(packet, "shared key at UP")

    def deliver_key_meter(self, mid, gen_pk, packet: Packet, data: bytes) -> None:
        try:
            self.timed("meter", self.meters[mid].receive_shared_key, data, gen_pk, meter=mid)
        except MeteringError as exc:
            self.reject(packet, f"key distribution: {exc}")

    def report_round(self, pid: str, i: int) -> None:
        for mid in sorted(self.participants.get(pid, [])):
            meter = self.meters[mid]
            if meter.phase is not Phase.REPORTING or meter.state.shared_key is None:
                self.log_event("report_skipped", mid, program_id=pid, index=i,
                               reason=meter.phase.value if meter.phase is not Phase.REPORTING else "no key")
                continue
            wire = self.timed("meter", meter.build_report, meter=mid)
            self.report_values.append(meter.last_report)
            try:
                path = random_path(self.topology, self.address[mid], self.path_rng,
                                   self.cfg.min_hops, self.cfg.max_hops)
            except RouteError as exc:
                raise InvariantViolation(f"no relay path for a report: {exc}") from None
            hops = [self.nan_hop(a, b) for a, b in path.links()] + self.wan_up()

            def at_sink(packet, data, last_hop):
                self.timed("aggregator", self.agg.receive, last_hop, pid, data)
                self._epoch_packets.append(packet)
                self._epoch_wires[packet.id] = data

            packet = self.send("report", mid, hops, wire,
                               lambda p, d: self.receive_report(pid, p, d),
                               program_id=pid, on_relay=at_sink)
            self._sent_wires[packet.id] = wire
            self.report_packets[mid].append(packet.id)

    def receive_report(self, pid: str, packet: Packet, data: bytes) -> None:
        verdict = self.timed("utility", self.up.handle_report, pid, data, self.sched.now)
        self.verdicts[verdict.value] += 1
        if not verdict.accepted:
            self.reject(packet, f"report: {verdict.value}")

    def broadcast_bloom(self) -> None:
        snap = self.timed("aggregator", self.agg.broadcast_filter)
        self.bloom_stats["broadcasts"] += 1
        for packet in self._epoch_packets:
            seen = self._epoch_wires[packet.id]
            if not confirm_delivery(snap, seen):
                self.bloom_stats["false_negatives"] += 1
            sent = self._sent_wires.get(packet.id)
            if sent is not None and confirm_delivery(snap, sent):
                self.bloom_stats["confirmed"] += 1
        probes = self.cfg.fpr_probes
        for _ in range(probes):
            probe = crypto.random_bytes(self.probe_rng, 32)
            if snap.query(packet_digest(probe)):
                self.bloom_stats["false_positives"] += 1
        self.bloom_stats["probes"] += probes
        self.bloom_stats["analytic_fpr"].append(snap.analytic_fpr())
        size = len(snap.to_bytes())
        for mid in self.meter_ids:
            self.send("bloom", "AGG", [self.nan_hop(SINK, self.address[mid])], snap.to_bytes(),
                      lambda p, d: None)
        self.log_event("bloom_broadcast", "AGG", epoch=self.agg.epoch - 1,
                       packets=len(self._epoch_packets), bytes=size)
        self._epoch_packets = []
        self._epoch_wires = {}

    def release(self, mid: str) -> None:
        meter = self.meters[mid]
        rel = self.timed("meter", meter.release_token, self.sched.now, meter=mid)
        if rel is None:
            self.log_event("token_withheld", mid)
            return
        self.releases[mid] = rel
        self.log_event("token_released", mid)
        if not self.cfg.redeem:
            return
        t0 = time.perf_counter()
        wire = redemption_request(self.up_keys.public, rel.token, rel.signature, self.customer_rng)
        self.wall["customer"] += time.perf_counter() - t0
        self.customer.asym_ops += 1
        result = self.timed("utility", self.up.handle_redemption, wire, self.sched.now)
        self.redemptions[mid] = result.value
        self.log_event("redemption", mid, result=result.value)

    # -- run -----------------------------------------------------------------------

    def run(self) -> RunResult:
        self.verdicts = Counter()
        self.report_values: list = []
        self._sent_wires: dict[int, bytes] = {}
        self.report_packets = defaultdict(list)
        self.sched.at(self.cfg.start, "publish", self.publish)
        window_ends = set()
        active_programs = set(self.assignment.values())
        for pr in self.catalog:
            self.sched.at(pr.pat - CUTOFF_LEAD, "cutoff", lambda pid=pr.id: self.cutoff(pid))
            if pr.id not in active_programs:
                continue
            for i in range(pr.n):
                end = pr.pat + (i + 1) * pr.window
                self.sched.at(end, "report_round", lambda pid=pr.id, i=i: self.report_round(pid, i))
                window_ends.add(end)
        for end in sorted(window_ends):
            self.sched.at(end + BLOOM_LAG, "bloom", self.broadcast_bloom)
        release_at = {}
        for pr in self.catalog:
            active = pr.end + pr.tokinf.activation_delay
            release_at[pr.id] = active
        for mid in self.meter_ids:
            pid = self.assignment.get(mid)
            if pid is not None:
                self.sched.at(release_at[pid], "release", lambda mid=mid: self._release_if_done(mid))
        self.sched.run()
        return self._finish()

    def _release_if_done(self, mid: str) -> None:
        if self.meters[mid].phase is Phase.DONE:
            self.release(mid)

    # -- results ---------------------------------------------------------------------

    def utility_view(self, mid: str) -> OperationCounters:
        """The provider's work attributable to one participant, joined on
        simulator ground truth."""
        up = self.up.scoped
        parts = [up[SHARED]]
        parts += [up[f"enroll:{s}"] for s, m in sorted(self.enroll_seq.items()) if m == mid]
        meter = self.meters[mid]
        if meter.state.pseudonym is not None:
            parts.append(up.get(f"pseudonym:{meter.state.pseudonym.hex}", OperationCounters()))
        if meter.state.token is not None:
            parts.append(up.get(f"token:{meter.state.token.uid.hex()}", OperationCounters()))
        return total(parts)

    def check_counters(self) -> dict:
        executed = [pid for pid, st in self.up.programs.items() if st.decision is Decision.EXECUTE]
        if len(executed) != 1:
            raise InvariantViolation("counter check needs exactly one executed program")
        pid = executed[0]
        pr = self.by_program[pid]
        parts = sorted(self.participants.get(pid, []))
        pred = predict_counters(pr.n, len(parts), noisy=pr.nsc > 0)
        for mid in parts:
            assert_counters(self.meters[mid].counters, pred.meter, label=f"meter {mid}")
            assert_counters(self.utility_view(mid), pred.utility, label=f"utility for {mid}")
        assert_counters(self.agg.counters, pred.aggregator, label="aggregator")
        return {"program_id": pid, "n": pr.n, "participants": len(parts),
                "meter": pred.meter.as_dict(), "aggregator": pred.aggregator.as_dict(),
                "utility": pred.utility.as_dict()}

    def _finish(self) -> RunResult:
        cfg = self.cfg
        reports = [p for p in self.packets.values() if p.kind == "report"]
        sent = len(reports)
        dropped = sum(p.dropped for p in reports)
        rejected = sum(p.rejected is not None for p in reports)
        accepted = self.verdicts[Verdict.ACCEPT.value]
        if sent != accepted + rejected + dropped:
            raise InvariantViolation(f"flow conservation: sent {sent} != accepted {accepted} + "
                                     f"rejected {rejected} + dropped {dropped}")
        for mid, ids in self.report_packets.items():
            mine = [self.packets[i] for i in ids]
            ok = sum(1 for p in mine if p.delivered and p.rejected is None)
            if len(mine) != ok + sum(p.dropped for p in mine) + sum(p.rejected is not None for p in mine):
                raise InvariantViolation(f"flow conservation for {mid}")
        if self.bloom_stats["false_negatives"]:
            raise InvariantViolation("delivery filter returned a false negative")
        tampered = sorted(self.adversary.tampered)
        unnoticed = [i for i in tampered if self.packets[i].rejected is None and not self.packets[i].dropped]
        if unnoticed:
            raise InvariantViolation(f"{len(unnoticed)} tampered packets were not rejected")
        honest = cfg.adversary.mode != "tamper" and not cfg.drop_prob
        expected_records = 0
        for pid, st in self.up.programs.items():
            if st.decision is Decision.EXECUTE:
                expected_records += len(self.participants.get(pid, [])) * self.by_program[pid].n
        if honest:
            if len(self.up.store) != expected_records:
                raise InvariantViolation(f"archive completeness: {len(self.up.store)} records, "
                                         f"expected {expected_records}")
            for rec in self.up.participants.values():
                if rec.reports_accepted != self.by_program[rec.program_id].n:
                    raise InvariantViolation("a participant did not complete its program")
        counter_check = self.check_counters() if cfg.check_counters else None

        eaves = None
        if cfg.adversary.mode == "eavesdrop":
            values = [v for pair in self.report_values for v in pair]
            needles = []
            for m in self.meters.values():
                if m.state.pseudonym is not None:
                    needles.append(("pseudonym", m.state.pseudonym.uuid))
            eaves = scan_transcript(self.adversary.transcript, self.meter_ids, values, needles)

        per_meter = {}
        for mid in self.meter_ids:
            m = self.meters[mid]
            ids = self.report_packets.get(mid, [])
            per_meter[mid] = {
                "program_id": self.assignment.get(mid),
                "phase": m.phase.value,
                "counters": m.counters.as_dict(),
                "reports_sent": len(ids),
                "reports_accepted": sum(1 for i in ids if self.packets[i].delivered
                                        and self.packets[i].rejected is None),
                "clamp_events": m.clamp_events,
                "interpolated": m.interpolated_readings,
            }
        utility_per_participant = {
            mid: self.utility_view(mid).as_dict()
            for pid in sorted(self.participants) for mid in sorted(self.participants[pid])
        }
        programs = {}
        for pid, st in self.up.programs.items():
            programs[pid] = {
                "decision": st.decision.value if st.decision else None,
                "participants": len(self.participants.get(pid, [])),
                "enrolled": sum(1 for m, p in self.assignment.items() if p == pid),
                "records": sum(1 for r in self.up.store if r.program_id == pid),
            }
        link_bytes = {k: {**v, "seconds": float(v["seconds"])} for k, v in sorted(self.bytes.items())}
        statuses = self.up.ledger.statuses()
        probes = self.bloom_stats["probes"]
        afpr = self.bloom_stats["analytic_fpr"]
        metrics = {
            "scenario": {"meters": cfg.meters, "seed": cfg.seed, "rsa_bits": cfg.rsa_bits,
                         "threshold": cfg.threshold, "adversary": cfg.adversary.mode,
                         "optimized": cfg.optimized},
            "sim_time": {"start": _iso(cfg.start), "end": _iso(self.sched.now),
                         "events": self.sched.processed},
            "programs": programs,
            "counters": {
                "meters": {m: v["counters"] for m, v in per_meter.items() if v["program_id"]},
                "aggregator": self.agg.counters.as_dict(),
                "utility_scoped": {k: v.as_dict() for k, v in sorted(self.up.scoped.items())},
                "utility_per_participant": utility_per_participant,
                "customer": self.customer.as_dict(),
            },
            "counter_check": counter_check,
            "meters": per_meter,
            "reports": {"sent": sent, "accepted": accepted, "rejected": rejected, "dropped": dropped,
                        "verdicts": dict(sorted(self.verdicts.items()))},
            "messages": dict(sorted(self.kind_counts.items())),
            "links": link_bytes,
            "archive_records": len(self.up.store),
            "tokens": {"issued": len(statuses),
                       "statuses": dict(Counter(statuses.values())),
                       "released": len(self.releases),
                       "redemptions": dict(sorted(Counter(self.redemptions.values()).items()))},
            "clamp_events": sum(m.clamp_events for m in self.meters.values()),
            "bloom": {
                "broadcasts": self.bloom_stats["broadcasts"],
                "confirmed": self.bloom_stats["confirmed"],
                "false_negatives": self.bloom_stats["false_negatives"],
                "probes": probes,
                "false_positives": self.bloom_stats["false_positives"],
                "measured_fpr": self.bloom_stats["false_positives"] / probes if probes else 0.0,
                "mean_analytic_fpr": sum(afpr) / len(afpr) if afpr else 0.0,
            },
            "adversary": {
                "mode": cfg.adversary.mode,
                "tampered": len(tampered),
                "tampered_rejected": sum(1 for i in tampered if self.packets[i].rejected is not None),
                "rejections": sum(1 for p in self.packets.values() if p.rejected is not None),
                "eavesdrop": eaves,
            },
            "up_rejections": [list(r) for r in self.up.rejections],
        }
        timings = {
            "wall_seconds": dict(sorted(self.wall.items())),
            "per_meter_wall_seconds": dict(sorted(self.wall_meter.items())),
        }
        return RunResult(cfg, metrics, timings, self.events, self.up.store.to_csv(),
                         self.up.ledger.to_ndjson(), self.trace, self)


def _td(seconds: Fraction) -> timedelta:
    return timedelta(microseconds=round(seconds * 1_000_000))


def run(cfg: ScenarioConfig, *, measure_memory: bool = False) -> RunResult:
    if measure_memory:
        tracemalloc.start()
    t0 = time.perf_counter()
    try:
        sim = Simulation(cfg)
        result = sim.run()
    finally:
        peak = None
        if measure_memory:
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
    result.timings["total_wall_seconds"] = time.perf_counter() - t0
    if peak is not None:
        result.timings["peak_traced_bytes"] = peak
    return result
