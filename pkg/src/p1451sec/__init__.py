"""Security tooling for IEEE P1451.1.6 sensor networks over MQTT.

Security TEDS codec, read-TEDS network-service messages, a level-enforcing
MQTT broker, the ACL update service (ACS) and an NCAP simulator.
"""

__version__ = "0.1.0"
