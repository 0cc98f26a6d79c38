"""
Utilidades: logs, contenedor binario, reportes y repeticiones por semilla.
"""
