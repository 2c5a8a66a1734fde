"""Probe a live broker at every security level and print the observed matrix.

Columns: anonymous CONNECT accepted, plaintext refused, subscribe by a user
with no ACL entry denied.  The last column checks the row against the policy
table.
"""
import logging
import tempfile
from pathlib import Path

from p1451sec.broker import Broker, BrokerConfig
from p1451sec.client import ClientError, ConnectionRefused, MqttClient
from p1451sec.passwords import write_password_file
from p1451sec.teds import Policy, SecurityLevel, level_policies
from p1451sec.tls import client_context, generate_self_signed


def probe(broker, tls, user=None, password=None, client_id="probe"):
    host, port = broker.address
    client = MqttClient(host, port, client_id, user, password, tls=tls)
    try:
        client.connect(timeout=3)
    except ConnectionRefused:
        return None
    except (ClientError, OSError):
        return "dropped"
    return client


def row(level, work, cert, key):
    policies = level_policies(level)
    config = BrokerConfig(port=0, level=level)
    if Policy.ENCRYPTION in policies:
        config.tls_cert, config.tls_key = cert, key
    if Policy.AUTHENTICATION in policies:
        config.password_file = write_password_file(work / f"pw-{level.value}", {"nobody": "pw"})
    if Policy.AUTHORIZATION in policies:
        config.acl_file = work / f"acl-{level.value}"
        config.acl_file.write_text("")
    tls = client_context(cert) if Policy.ENCRYPTION in policies else None
    with Broker(config).start() as broker:
        anon = probe(broker, tls, client_id="anon")
        plain = probe(broker, None, "nobody", "pw", "plain")
        user = probe(broker, tls, "nobody", "pw", "nobody")
        denied = user.subscribe(["any/topic"]) == (0x80,)
        for c in (anon, plain, user):
            if isinstance(c, MqttClient):
                c.disconnect()
    observed = (isinstance(anon, MqttClient), not isinstance(plain, MqttClient), denied)
    expected = (Policy.AUTHENTICATION not in policies, Policy.ENCRYPTION in policies,
                Policy.AUTHORIZATION in policies)
    return observed, observed == expected


def main():
    logging.basicConfig(level=logging.ERROR)
    work = Path(tempfile.mkdtemp(prefix="p1451-matrix-"))
    cert, key = generate_self_signed(work / "cert.pem", work / "key.pem")
    print(f"{'level':<6}{'anonymous':<12}{'plaintext':<12}{'no-ACL sub':<12}conforms")
    yn = {True: "accepted", False: "refused"}
    for level in SecurityLevel:
        (anon, plain_refused, denied), ok = row(level, work, cert, key)
        print(f"{level.value:<6}{yn[anon]:<12}{yn[not plain_refused]:<12}"
              f"{'denied' if denied else 'allowed':<12}{'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
