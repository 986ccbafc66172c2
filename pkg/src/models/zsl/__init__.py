"""
Zero-shot learning components: semantic feature expansion, manifold
alignment, prototype update and nearest-prototype recognition
"""
