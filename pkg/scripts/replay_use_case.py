"""Replay the read-security-TEDS use case in one process.

Starts a broker at the chosen level, an NCAP serving the example security
TEDS, and runs the APP read flow N times, printing the summary once and the
latency distribution.

    python3 scripts/replay_use_case.py --level E --runs 20
"""
import argparse
import logging
import statistics
import tempfile
import uuid
from pathlib import Path

from p1451sec.app import make_command, pretty_print, read_teds_flow
from p1451sec.broker import Broker, BrokerConfig
from p1451sec.client import MqttClient
from p1451sec.ncap import NcapConfig, NcapService, repository_for
from p1451sec.passwords import write_password_file
from p1451sec.teds import GOLDEN_TEDS, Policy, SecurityLevel, level_policies
from p1451sec.tls import client_context, generate_self_signed

USERS = {"app01": "app-secret", "ncap01": "ncap-secret"}
ACL = """\
user app01
topic read 1451.1.6/reply/#
topic write 1451.1.6/cmd/#

user ncap01
topic read 1451.1.6/cmd/#
topic write 1451.1.6/reply/#
"""


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--level", type=lambda s: SecurityLevel(s.upper()), default=SecurityLevel.N)
    parser.add_argument("--runs", type=int, default=10)
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    policies = level_policies(args.level)
    work = Path(tempfile.mkdtemp(prefix="p1451-replay-"))
    config = BrokerConfig(port=0, level=args.level)
    tls = None
    if Policy.ENCRYPTION in policies:
        config.tls_cert, config.tls_key = generate_self_signed(work / "cert.pem", work / "key.pem")
        tls = client_context(config.tls_cert)
    if Policy.AUTHENTICATION in policies:
        config.password_file = write_password_file(work / "passwords", USERS)
    if Policy.AUTHORIZATION in policies:
        config.acl_file = work / "acl"
        config.acl_file.write_text(ACL)

    ncap_id = uuid.uuid4()
    with Broker(config).start() as broker:
        host, port = broker.address
        ncap_cfg = NcapConfig(ncap_id, host, port, "ncap01", USERS["ncap01"], tls)
        with NcapService(ncap_cfg, repository_for(GOLDEN_TEDS)).start() as ncap:
            ncap.ready.wait(5)
            with MqttClient(host, port, "app01", "app01", USERS["app01"], tls=tls) as client:
                client.connect()
                timings = []
                for i in range(args.runs):
                    result = read_teds_flow(client, make_command(ncap_id))
                    timings.append(result.elapsed * 1000)
                    if i == 0:
                        print(pretty_print(result.teds), end="")
    print(f"\nlevel {args.level.value}: {args.runs} reads, "
          f"median {statistics.median(timings):.2f} ms, max {max(timings):.2f} ms")


if __name__ == "__main__":
    main()
