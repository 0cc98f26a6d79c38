"""
Motor de entrenamiento: configuración, redes, checkpoints y bucles de las dos etapas.
"""
