"""Two-tier speech provenance toolkit.

Enrollment embeds a compact per-chunk watermark payload and publishes an
issuer-signed Merkle commitment over chunk fingerprints; verification
rebuilds a splice-aware timeline from suspect audio, chunk by chunk, at
two assurance tiers (watermark-only attribution, strict MSv1 integrity).
"""

__version__ = "0.1.0"
