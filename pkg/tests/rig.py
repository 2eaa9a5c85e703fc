"""A hand-driven single-program protocol run for unit tests, without the
simulator's network."""

import random
from dataclasses import dataclass, field
from datetime import timedelta

from conftest import START, keypair_for
from incentive_metering.aggregator import UP_RECIPIENT, Aggregator
from incentive_metering.meter import MeterAgent
from incentive_metering.programs import ProgramSpec, Purpose, generate_program_list
from incentive_metering.sim.dataset import synthetic_readings
from incentive_metering.utility import UtilityProvider


@dataclass
class Rig:
    program: object
    up: UtilityProvider
    agg: Aggregator
    meters: dict
    outcome: object = None
    wires: dict = field(default_factory=dict)

    def report(self, mid):
        return self.meters[mid].build_report()

    def run_all_reports(self):
        for _ in range(self.program.n):
            for mid, m in self.meters.items():
                if m.state.shared_key is not None:
                    assert self.up.handle_report(self.program.id, m.build_report()).accepted

    @property
    def after_end(self):
        return self.program.end + self.program.tokinf.activation_delay + timedelta(seconds=1)


def make_rig(count=2, spec=ProgramSpec(4, 7, Purpose.DATA_DRIVEN), threshold=1, bits=512,
             distribute=True, optimized=False) -> Rig:
    ids = [f"SM-{i:04d}" for i in range(count)]
    keys = {mid: keypair_for(mid, bits) for mid in ids}
    up_keys, agg_keys = keypair_for("UP", bits), keypair_for("AGG", bits)
    pr = generate_program_list([spec], now=START)[0]
    up = UtilityProvider(up_keys, {m: k.public for m, k in keys.items()}, random.Random("up"), threshold)
    blob, sig = up.publish_programs([pr])
    readings = synthetic_readings(ids, pr.pat, pr.pd, lambda m: random.Random(f"data/{m}"))
    meters = {m: MeterAgent(m, keys[m], up_keys.public, agg_keys.public, random.Random(f"rng/{m}"),
                            readings=readings[m], optimized=optimized) for m in ids}
    for m in meters.values():
        m.receive_catalog(blob, sig)
        up.handle_enrollment(m.enroll(pr))
    outcome = up.close_enrollment(pr.id)
    for _seq, mid, wire in outcome.grants:
        meters[mid].process_grant(wire)
    agg = Aggregator(agg_keys, random.Random("agg"))
    rig = Rig(pr, up, agg, meters, outcome)
    if distribute and outcome.grants:
        gen = ids[0]
        wire = meters[gen].generate_shared_key()
        recipients = {m: keys[m].public for m in ids}
        recipients[UP_RECIPIENT] = up_keys.public
        out = agg.distribute_shared_key(wire, gen, keys[gen].public, pr.id, recipients)
        rig.wires = out
        for name, w in out.items():
            if name == UP_RECIPIENT:
                assert up.receive_shared_key(w, {m: k.public for m, k in keys.items()})
            else:
                meters[name].receive_shared_key(w, keys[gen].public)
    return rig
